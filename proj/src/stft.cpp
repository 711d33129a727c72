#include "texstat/stft.hpp"

#include <cmath>

#include "texstat/ops.hpp"

namespace texstat {

template <typename T>
StftParams<T> make_stft_params(std::int64_t channels, std::int64_t n_levels, std::int64_t heads,
                               std::int64_t window, bool use_gate, std::mt19937_64& rng) {
    if (channels < 1 || n_levels < 1)
        throw ConfigError("stft needs positive channel and level counts");
    StftParams<T> p;
    p.n_levels = n_levels;
    p.use_gate = use_gate;
    p.ksco = make_ksco_aggregate_params<T>(channels, rng);
    p.attn = make_attention_params<T>(channels, heads, window, rng);
    if (use_gate) {
        p.alpha = Tensor<T>::scalar(T(1));
        p.alpha.set_requires_grad(true);
        const std::int64_t in = channels + n_levels;
        const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(in)));
        p.mlp_w1 = Tensor<T>::uniform({channels, in}, -bound, bound, rng);
        p.mlp_w1.set_requires_grad(true);
        p.mlp_b1 = Tensor<T>::param({channels, 1});
        p.mlp_w2 = Tensor<T>::param({channels, channels});
        p.mlp_b2 = Tensor<T>::param({channels, 1});
    }
    return p;
}

template <typename T>
StftResult<T> stft_forward(const Tensor<T>& f, const StftParams<T>& params,
                           KscoFreeze<T>* freeze, StftTrace<T>* trace) {
    if (f.rank() != 3)
        throw ShapeError("stft_forward expects C x H x W, got " + shape_str(f.shape()));
    const std::int64_t c = f.dim(0);

    Tensor<T> x = params.use_ca ? comprehensive_attention(f) : f;
    Tensor<T> o_str = lwsa(x, x, x, params.attn);
    if (trace) trace->o_str = o_str;

    StftResult<T> out;
    out.embedding = ksco(f, params.n_levels, params.ksco, params.excess_kurtosis, freeze);

    if (!params.use_gate) {
        out.fusion = o_str;
        return out;
    }

    Tensor<T> o_q = reshape(pool2d(PoolKind::kGlobalAvg, o_str), {c, 1});
    Tensor<T> s_q = reduce(ReduceKind::kSum, out.embedding.s, 1, true);  // [N x 1]
    Tensor<T> gate_in = concat<T>({mul(o_q, params.alpha), s_q}, 0);
    Tensor<T> hidden = relu(add(matmul(params.mlp_w1, gate_in), params.mlp_b1));
    Tensor<T> gate = add(matmul(params.mlp_w2, hidden), params.mlp_b2);  // [C x 1]
    out.fusion = add(o_str, reshape(gate, {c, 1, 1}));
    if (trace) {
        trace->o_q = o_q;
        trace->s_q = s_q;
        trace->gate_input = gate_in;
        trace->gate = gate;
    }
    return out;
}

#define TEXSTAT_INSTANTIATE_STFT(T)                                                             \
    template StftParams<T> make_stft_params<T>(std::int64_t, std::int64_t, std::int64_t,        \
                                               std::int64_t, bool, std::mt19937_64&);           \
    template StftResult<T> stft_forward<T>(const Tensor<T>&, const StftParams<T>&,              \
                                           KscoFreeze<T>*, StftTrace<T>*);

TEXSTAT_INSTANTIATE_STFT(float)
TEXSTAT_INSTANTIATE_STFT(double)

#undef TEXSTAT_INSTANTIATE_STFT

}  // namespace texstat
