#include "texstat/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <ostream>
#include <sstream>

#include "texstat/metrics.hpp"
#include "texstat/ops.hpp"

namespace texstat {

void TrainConfig::validate() const {
    if (batch_size < 1 || epochs < 1 || decay_every_epochs < 1)
        throw ConfigError("train config: batch_size, epochs, decay_every_epochs must be positive");
    if (learning_rate <= 0.0 || weight_decay < 0.0)
        throw ConfigError("train config: learning_rate must be positive, weight_decay nonnegative");
    if (decay_factor <= 0.0 || decay_factor > 1.0)
        throw ConfigError("train config: decay_factor must be in (0,1]");
}

void TrainConfig::apply_kv(std::map<std::string, std::string>& kv) {
    batch_size = take_kv_int(kv, "batch_size", batch_size);
    epochs = take_kv_int(kv, "epochs", epochs);
    learning_rate = take_kv_double(kv, "learning_rate", learning_rate);
    weight_decay = take_kv_double(kv, "weight_decay", weight_decay);
    decay_factor = take_kv_double(kv, "decay_factor", decay_factor);
    decay_every_epochs = take_kv_int(kv, "decay_every_epochs", decay_every_epochs);
    augment = take_kv_bool(kv, "augment", augment);
    seed = static_cast<std::uint64_t>(take_kv_int(kv, "train_seed", static_cast<std::int64_t>(seed)));
    checkpoint_dir = take_kv_string(kv, "checkpoint_dir", checkpoint_dir);
}

template <typename T>
AdamState<T> AdamState<T>::init(const std::vector<std::pair<std::string, Tensor<T>>>& params) {
    AdamState<T> st;
    st.m.reserve(params.size());
    st.v.reserve(params.size());
    for (const auto& [name, p] : params) {
        st.m.emplace_back(static_cast<std::size_t>(p.numel()), T{0});
        st.v.emplace_back(static_cast<std::size_t>(p.numel()), T{0});
    }
    return st;
}

template <typename T>
Tensor<T> dice_loss(const Tensor<T>& pred_prob, const Tensor<T>& target) {
    if (pred_prob.shape() != target.shape())
        throw ShapeError("dice_loss: shape mismatch " + shape_str(pred_prob.shape()) + " vs " +
                         shape_str(target.shape()));
    const T smooth = static_cast<T>(1e-6);
    Tensor<T> overlap = reduce_all(ReduceKind::kSum, mul(pred_prob, target));
    Tensor<T> pred_sq = reduce_all(ReduceKind::kSum, mul(pred_prob, pred_prob));
    Tensor<T> targ_sq = reduce_all(ReduceKind::kSum, mul(target, target));
    Tensor<T> num = add_scalar(mul_scalar(overlap, static_cast<T>(2)), smooth);
    Tensor<T> den = add_scalar(add(pred_sq, targ_sq), smooth);
    return add_scalar(neg(divide(num, den)), static_cast<T>(1));
}

template <typename T>
void adam_step(AdamState<T>& state, std::vector<std::pair<std::string, Tensor<T>>>& params,
               double lr, double weight_decay) {
    if (state.m.size() != params.size())
        throw ShapeError("adam_step: state holds " + std::to_string(state.m.size()) +
                         " buffers for " + std::to_string(params.size()) + " parameters");
    state.step += 1;
    const double bias1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bias2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    const double keep = 1.0 - lr * weight_decay;
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor<T>& p = params[i].second;
        if (static_cast<std::int64_t>(state.m[i].size()) != p.numel())
            throw ShapeError("adam_step: buffer size mismatch for '" + params[i].first + "'");
        T* w = p.data();
        const T* g = p.grad().data();
        T* m = state.m[i].data();
        T* v = state.v[i].data();
        for (std::int64_t j = 0; j < p.numel(); ++j) {
            if (weight_decay != 0.0) w[j] = static_cast<T>(w[j] * keep);
            const double gj = static_cast<double>(g[j]);
            const double mj = state.beta1 * static_cast<double>(m[j]) + (1.0 - state.beta1) * gj;
            const double vj =
                state.beta2 * static_cast<double>(v[j]) + (1.0 - state.beta2) * gj * gj;
            m[j] = static_cast<T>(mj);
            v[j] = static_cast<T>(vj);
            w[j] = static_cast<T>(static_cast<double>(w[j]) -
                                  lr * (mj / bias1) / (std::sqrt(vj / bias2) + state.eps));
        }
    }
}

double lr_schedule(std::int64_t epoch, const TrainConfig& config) {
    const std::int64_t stages = epoch / config.decay_every_epochs;
    return config.learning_rate * std::pow(config.decay_factor, static_cast<double>(stages));
}

namespace {

template <typename T>
Tensor<T> flip_axis(const Tensor<T>& t, int axis) {
    if (t.rank() != 3) throw ShapeError("flip expects rank 3, got " + shape_str(t.shape()));
    const std::int64_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
    Tensor<T> out = Tensor<T>::zeros(t.shape());
    const T* src = t.data();
    T* dst = out.data();
    for (std::int64_t ci = 0; ci < c; ++ci)
        for (std::int64_t y = 0; y < h; ++y) {
            const std::int64_t sy = axis == 1 ? h - 1 - y : y;
            const T* srow = src + (ci * h + sy) * w;
            T* drow = dst + (ci * h + y) * w;
            if (axis == 2)
                for (std::int64_t x = 0; x < w; ++x) drow[x] = srow[w - 1 - x];
            else
                std::copy(srow, srow + w, drow);
        }
    return out;
}

}  // namespace

template <typename T>
Tensor<T> flip_vertical(const Tensor<T>& t) {
    return flip_axis(t, 1);
}

template <typename T>
Tensor<T> flip_horizontal(const Tensor<T>& t) {
    return flip_axis(t, 2);
}

template <typename T>
SamplePair<T> augment_pair(const SamplePair<T>& sample, std::mt19937_64& rng) {
    const bool do_v = (rng() & 1) != 0;
    const bool do_h = (rng() & 1) != 0;
    SamplePair<T> out = sample;
    if (do_v) {
        out.image = flip_vertical(out.image);
        out.mask = flip_vertical(out.mask);
    }
    if (do_h) {
        out.image = flip_horizontal(out.image);
        out.mask = flip_horizontal(out.mask);
    }
    return out;
}

template <typename T>
double mean_binary_dice(const Model<T>& model, const std::vector<SamplePair<T>>& samples,
                        double threshold) {
    if (samples.empty()) throw DataError("mean_binary_dice: no samples");
    double sum = 0.0;
    for (const auto& s : samples) {
        Tensor<T> prob = sigmoid(model.forward(s.image));
        Tensor<T> pred = Tensor<T>::zeros(prob.shape());
        const T* p = prob.data();
        T* b = pred.data();
        for (std::int64_t i = 0; i < prob.numel(); ++i)
            b[i] = static_cast<double>(p[i]) >= threshold ? static_cast<T>(1) : static_cast<T>(0);
        sum += dice(confusion(pred, s.mask));
    }
    return sum / static_cast<double>(samples.size());
}

template <typename T>
TrainResult train(Model<T>& model, const std::vector<SamplePair<T>>& train_samples,
                  const std::vector<SamplePair<T>>& val_samples, const TrainConfig& config,
                  std::ostream* log) {
    config.validate();
    if (train_samples.empty()) throw DataError("train: empty training set");
    const std::vector<SamplePair<T>>& vals = val_samples.empty() ? train_samples : val_samples;

    AdamState<T> opt = AdamState<T>::init(model.params);
    std::mt19937_64 rng(config.seed);
    const std::int64_t n = static_cast<std::int64_t>(train_samples.size());
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

    TrainResult res;
    if (!config.checkpoint_dir.empty())
        std::filesystem::create_directories(config.checkpoint_dir);

    for (std::int64_t epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = lr_schedule(epoch, config);
        for (std::int64_t i = n - 1; i > 0; --i) {
            const std::int64_t j =
                static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(i + 1));
            std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
        }

        double loss_sum = 0.0;
        for (std::int64_t start = 0; start < n; start += config.batch_size) {
            const std::int64_t count = std::min(config.batch_size, n - start);
            for (auto& [name, p] : model.params) p.zero_grad();

            Tape<T> tape;
            TapeScope<T> scope(tape);
            Tensor<T> batch_loss;
            for (std::int64_t k = 0; k < count; ++k) {
                SamplePair<T> s = train_samples[static_cast<std::size_t>(
                    order[static_cast<std::size_t>(start + k)])];
                if (config.augment) s = augment_pair(s, rng);
                Tensor<T> loss = dice_loss(sigmoid(model.forward(s.image)), s.mask);
                batch_loss = batch_loss.defined() ? add(batch_loss, loss) : loss;
            }
            batch_loss = mul_scalar(batch_loss, static_cast<T>(1.0 / static_cast<double>(count)));
            const double loss_val = static_cast<double>(batch_loss.item());
            if (!std::isfinite(loss_val))
                throw NumericError("training diverged: non-finite loss at epoch " +
                                   std::to_string(epoch));
            tape.backward(batch_loss);
            adam_step(opt, model.params, lr, config.weight_decay);
            loss_sum += loss_val * static_cast<double>(count);
        }

        const double epoch_loss = loss_sum / static_cast<double>(n);
        const double val_dice = mean_binary_dice(model, vals);
        res.trace.push_back({epoch, epoch_loss, lr, val_dice});
        if (val_dice > res.best_val_dice) {
            res.best_val_dice = val_dice;
            res.best_epoch = epoch;
            if (!config.checkpoint_dir.empty()) {
                res.best_checkpoint = config.checkpoint_dir + "/best.ckpt";
                save_checkpoint(res.best_checkpoint, model);
            }
        }
        if (log)
            (*log) << "epoch " << epoch << "  loss " << epoch_loss << "  lr " << lr
                   << "  val_dice " << val_dice << "\n";
    }
    if (!config.checkpoint_dir.empty()) {
        res.final_checkpoint = config.checkpoint_dir + "/final.ckpt";
        save_checkpoint(res.final_checkpoint, model);
    }
    return res;
}

std::string trace_to_csv(const std::vector<TraceRow>& trace) {
    std::ostringstream os;
    os.precision(17);
    os << "epoch,loss,lr,val_dice\n";
    for (const auto& r : trace)
        os << r.epoch << "," << r.loss << "," << r.lr << "," << r.val_dice << "\n";
    return os.str();
}

std::vector<TraceRow> trace_from_csv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    std::vector<TraceRow> rows;
    bool first = true;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (first) {
            first = false;
            if (line.rfind("epoch,", 0) == 0) continue;
        }
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream ls(line);
        TraceRow r;
        if (!(ls >> r.epoch >> r.loss >> r.lr >> r.val_dice))
            throw DataError("malformed trace row: '" + line + "'");
        rows.push_back(r);
    }
    return rows;
}

#define TEXSTAT_INSTANTIATE_TRAIN(T)                                                            \
    template struct AdamState<T>;                                                               \
    template Tensor<T> dice_loss<T>(const Tensor<T>&, const Tensor<T>&);                        \
    template void adam_step<T>(AdamState<T>&, std::vector<std::pair<std::string, Tensor<T>>>&,  \
                               double, double);                                                 \
    template Tensor<T> flip_vertical<T>(const Tensor<T>&);                                      \
    template Tensor<T> flip_horizontal<T>(const Tensor<T>&);                                    \
    template SamplePair<T> augment_pair<T>(const SamplePair<T>&, std::mt19937_64&);             \
    template double mean_binary_dice<T>(const Model<T>&, const std::vector<SamplePair<T>>&,     \
                                        double);                                                \
    template TrainResult train<T>(Model<T>&, const std::vector<SamplePair<T>>&,                 \
                                  const std::vector<SamplePair<T>>&, const TrainConfig&,        \
                                  std::ostream*);

TEXSTAT_INSTANTIATE_TRAIN(float)
TEXSTAT_INSTANTIATE_TRAIN(double)

#undef TEXSTAT_INSTANTIATE_TRAIN

}  // namespace texstat
