#include "texstat/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "texstat/ops.hpp"

namespace texstat {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

void ModelConfig::validate() const {
    if (input_h < 1 || input_w < 1 || base_channels < 1 || depth < 1 || heads < 1 || window < 1 ||
        n_levels_stft < 1 || n_levels_stet < 1)
        throw ConfigError("model config: all extents and counts must be positive");
    const std::int64_t div = std::int64_t{1} << depth;
    if (input_h % div != 0 || input_w % div != 0)
        throw ConfigError("input " + std::to_string(input_h) + "x" + std::to_string(input_w) +
                          " must be divisible by 2^depth = " + std::to_string(div));
    const std::int64_t bh = input_h / div, bw = input_w / div;
    const std::int64_t c_bottleneck = base_channels << depth;
    if (enable_stft) {
        if (bh % window != 0 || bw % window != 0)
            throw ConfigError("window " + std::to_string(window) +
                              " must divide the bottleneck grid " + std::to_string(bh) + "x" +
                              std::to_string(bw));
        if (c_bottleneck % heads != 0)
            throw ConfigError("bottleneck channels " + std::to_string(c_bottleneck) +
                              " must be divisible by heads " + std::to_string(heads));
    }
    if (enable_stet) {
        if (!enable_stft)
            throw ConfigError(
                "the enhance transformer consumes the fusion transformer's embedding; "
                "enable_stet requires enable_stft");
        if (depth < 3)
            throw ConfigError("enable_stet needs depth >= 3 (three encoder scales)");
        if ((2 * bh) % window != 0 || (2 * bw) % window != 0)
            throw ConfigError("window " + std::to_string(window) +
                              " must divide the query grid " + std::to_string(2 * bh) + "x" +
                              std::to_string(2 * bw));
        if (n_levels_stet % heads != 0)
            throw ConfigError("n_levels_stet " + std::to_string(n_levels_stet) +
                              " must be divisible by heads " + std::to_string(heads));
    }
}

void ModelConfig::apply_kv(std::map<std::string, std::string>& kv) {
    input_h = take_kv_int(kv, "input_h", input_h);
    input_w = take_kv_int(kv, "input_w", input_w);
    base_channels = take_kv_int(kv, "base_channels", base_channels);
    depth = take_kv_int(kv, "depth", depth);
    n_levels_stft = take_kv_int(kv, "n_levels_stft", n_levels_stft);
    n_levels_stet = take_kv_int(kv, "n_levels_stet", n_levels_stet);
    heads = take_kv_int(kv, "heads", heads);
    window = take_kv_int(kv, "window", window);
    enable_stft = take_kv_bool(kv, "enable_stft", enable_stft);
    enable_stet = take_kv_bool(kv, "enable_stet", enable_stet);
    enable_ca = take_kv_bool(kv, "enable_ca", enable_ca);
    enable_gating = take_kv_bool(kv, "enable_gating", enable_gating);
    excess_kurtosis = take_kv_bool(kv, "excess_kurtosis", excess_kurtosis);
    seed = static_cast<std::uint64_t>(take_kv_int(kv, "seed", static_cast<std::int64_t>(seed)));
}

std::string model_config_to_text(const ModelConfig& c) {
    std::ostringstream os;
    os << "input_h = " << c.input_h << "\n";
    os << "input_w = " << c.input_w << "\n";
    os << "base_channels = " << c.base_channels << "\n";
    os << "depth = " << c.depth << "\n";
    os << "n_levels_stft = " << c.n_levels_stft << "\n";
    os << "n_levels_stet = " << c.n_levels_stet << "\n";
    os << "heads = " << c.heads << "\n";
    os << "window = " << c.window << "\n";
    os << "enable_stft = " << (c.enable_stft ? "true" : "false") << "\n";
    os << "enable_stet = " << (c.enable_stet ? "true" : "false") << "\n";
    os << "enable_ca = " << (c.enable_ca ? "true" : "false") << "\n";
    os << "enable_gating = " << (c.enable_gating ? "true" : "false") << "\n";
    os << "excess_kurtosis = " << (c.excess_kurtosis ? "true" : "false") << "\n";
    os << "seed = " << c.seed << "\n";
    return os.str();
}

ModelConfig model_config_from_text(const std::string& text) {
    auto kv = parse_kv_text(text);
    ModelConfig c;
    c.apply_kv(kv);
    if (!kv.empty()) throw ConfigError("unknown model config key '" + kv.begin()->first + "'");
    return c;
}

namespace {

template <typename T>
Tensor<T> init_conv_weight(Shape shape, std::mt19937_64& rng) {
    std::int64_t fan_in = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
    const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(fan_in)));
    Tensor<T> t = Tensor<T>::uniform(std::move(shape), -bound, bound, rng);
    t.set_requires_grad(true);
    return t;
}

template <typename T>
ConvBlock<T> make_block(std::int64_t in, std::int64_t out, std::mt19937_64& rng) {
    ConvBlock<T> b;
    b.w1 = init_conv_weight<T>({out, in, 3, 3}, rng);
    b.b1 = Tensor<T>::param({out, 1, 1});
    b.w2 = init_conv_weight<T>({out, out, 3, 3}, rng);
    b.b2 = Tensor<T>::param({out, 1, 1});
    return b;
}

}  // namespace

template <typename T>
Model<T> build_model(const ModelConfig& config) {
    config.validate();
    Model<T> m;
    m.config = config;
    std::mt19937_64 rng(config.seed);

    auto reg = [&m](const std::string& name, Tensor<T> t) {
        m.params.emplace_back(name, std::move(t));
    };
    auto reg_block = [&reg](const std::string& prefix, const ConvBlock<T>& b) {
        reg(prefix + ".conv1.weight", b.w1);
        reg(prefix + ".conv1.bias", b.b1);
        reg(prefix + ".conv2.weight", b.w2);
        reg(prefix + ".conv2.bias", b.b2);
    };
    auto reg_ksco = [&reg](const std::string& prefix, const KscoAggregateParams<T>& p) {
        reg(prefix + ".conv1.weight", p.w1);
        reg(prefix + ".conv1.bias", p.b1);
        reg(prefix + ".conv2.weight", p.w2);
        reg(prefix + ".conv2.bias", p.b2);
    };
    auto reg_attn = [&reg](const std::string& prefix, const AttentionParams<T>& p) {
        reg(prefix + ".l_q", p.l_q);
        reg(prefix + ".l_k", p.l_k);
        reg(prefix + ".l_v", p.l_v);
        reg(prefix + ".l_o", p.l_o);
    };

    const std::int64_t depth = config.depth;
    const std::int64_t base = config.base_channels;

    std::int64_t in_ch = 3;
    for (std::int64_t i = 0; i < depth; ++i) {
        const std::int64_t out_ch = base << i;
        m.enc.push_back(make_block<T>(in_ch, out_ch, rng));
        reg_block("enc." + std::to_string(i), m.enc.back());
        in_ch = out_ch;
    }
    const std::int64_t c_bottleneck = base << depth;
    m.bottleneck = make_block<T>(in_ch, c_bottleneck, rng);
    reg_block("bottleneck", m.bottleneck);

    if (config.enable_stft) {
        m.stft = make_stft_params<T>(c_bottleneck, config.n_levels_stft, config.heads,
                                     config.window, config.enable_gating, rng);
        m.stft->use_ca = config.enable_ca;
        m.stft->excess_kurtosis = config.excess_kurtosis;
        reg_ksco("stft.ksco", m.stft->ksco);
        reg_attn("stft.attn", m.stft->attn);
        if (config.enable_gating) {
            reg("stft.alpha", m.stft->alpha);
            reg("stft.gate.fc1.weight", m.stft->mlp_w1);
            reg("stft.gate.fc1.bias", m.stft->mlp_b1);
            reg("stft.gate.fc2.weight", m.stft->mlp_w2);
            reg("stft.gate.fc2.bias", m.stft->mlp_b2);
        }
    }

    if (config.enable_stet) {
        std::vector<std::int64_t> enc_channels;
        for (std::int64_t i = depth - 3; i < depth; ++i) enc_channels.push_back(base << i);
        m.stet = make_stet_params<T>(config.n_levels_stft, config.n_levels_stet, enc_channels,
                                     config.heads, config.window, rng);
        m.stet->use_ca = config.enable_ca;
        m.stet->excess_kurtosis = config.excess_kurtosis;
        for (std::size_t k = 0; k < m.stet->ksco.size(); ++k)
            reg_ksco("stet.ksco." + std::to_string(k), m.stet->ksco[k]);
        reg("stet.proj_q.weight", m.stet->proj_q_w);
        reg("stet.proj_q.bias", m.stet->proj_q_b);
        reg("stet.proj_kv.weight", m.stet->proj_kv_w);
        reg("stet.proj_kv.bias", m.stet->proj_kv_b);
        reg_attn("stet.attn", m.stet->attn);
        reg("stet.ffn.d1.weight", m.stet->ffn_d1_w);
        reg("stet.ffn.d1.bias", m.stet->ffn_d1_b);
        reg("stet.ffn.d6.weight", m.stet->ffn_d6_w);
        reg("stet.ffn.d6.bias", m.stet->ffn_d6_b);
        reg("stet.ffn.d12.weight", m.stet->ffn_d12_w);
        reg("stet.ffn.d12.bias", m.stet->ffn_d12_b);
        reg("stet.ffn.fc1.weight", m.stet->ffn_m1_w);
        reg("stet.ffn.fc1.bias", m.stet->ffn_m1_b);
        reg("stet.ffn.fc2.weight", m.stet->ffn_m2_w);
        reg("stet.ffn.fc2.bias", m.stet->ffn_m2_b);

        const std::int64_t dec_ch = base << (depth - 1);
        m.stet_fuse_w = init_conv_weight<T>({dec_ch, dec_ch + config.n_levels_stet, 3, 3}, rng);
        m.stet_fuse_b = Tensor<T>::param({dec_ch, 1, 1});
        reg("stet.fuse.weight", m.stet_fuse_w);
        reg("stet.fuse.bias", m.stet_fuse_b);
    }

    m.dec.resize(static_cast<std::size_t>(depth));
    for (std::int64_t i = depth - 1; i >= 0; --i) {
        const std::int64_t out_ch = base << i;
        const std::int64_t cat_ch = (base << (i + 1)) + out_ch;
        m.dec[static_cast<std::size_t>(i)] = make_block<T>(cat_ch, out_ch, rng);
        reg_block("dec." + std::to_string(i), m.dec[static_cast<std::size_t>(i)]);
    }

    m.head_w = init_conv_weight<T>({1, base, 1, 1}, rng);
    m.head_b = Tensor<T>::param({1, 1, 1});
    reg("head.weight", m.head_w);
    reg("head.bias", m.head_b);
    return m;
}

template <typename T>
Tensor<T> Model<T>::forward(const Tensor<T>& image) const {
    if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != config.input_h ||
        image.dim(2) != config.input_w)
        throw ShapeError("forward expects [3," + std::to_string(config.input_h) + "," +
                         std::to_string(config.input_w) + "], got " + shape_str(image.shape()));

    auto block = [](const Tensor<T>& in, const ConvBlock<T>& b) {
        Tensor<T> h = relu(add(conv2d(in, b.w1, 1, 1, 1), b.b1));
        return relu(add(conv2d(h, b.w2, 1, 1, 1), b.b2));
    };

    std::vector<Tensor<T>> skips;
    Tensor<T> x = image;
    for (std::size_t i = 0; i < enc.size(); ++i) {
        x = block(x, enc[i]);
        skips.push_back(x);
        x = pool2d(PoolKind::kMax, x, 2, 2);
    }
    x = block(x, bottleneck);

    QuantizedIntensityEmbedding<T> emb;
    if (stft) {
        StftResult<T> r = stft_forward(x, *stft);
        x = r.fusion;
        emb = r.embedding;
    }
    Tensor<T> enhanced;
    if (stet) {
        std::vector<Tensor<T>> feats(skips.end() - 3, skips.end());
        enhanced = stet_forward(emb, feats, *stet);
    }

    for (std::int64_t i = config.depth - 1; i >= 0; --i) {
        x = upsample2x(x);
        x = concat<T>({x, skips[static_cast<std::size_t>(i)]}, 0);
        x = block(x, dec[static_cast<std::size_t>(i)]);
        if (stet && i == config.depth - 1)
            x = relu(add(conv2d(concat<T>({x, enhanced}, 0), stet_fuse_w, 1, 1, 1), stet_fuse_b));
    }
    return add(conv2d(x, head_w), head_b);
}

template <typename T>
std::int64_t parameter_count(const Model<T>& model) {
    std::int64_t n = 0;
    for (const auto& [name, t] : model.params) n += t.numel();
    return n;
}

template <typename T>
std::vector<std::string> parameter_names(const Model<T>& model) {
    std::vector<std::string> names;
    names.reserve(model.params.size());
    for (const auto& [name, t] : model.params) names.push_back(name);
    return names;
}

// ---------------------------------------------------------------------------
// Checkpoint I/O
// ---------------------------------------------------------------------------

namespace {

constexpr unsigned char kCheckpointVersion = 1;

template <typename T>
const char* dtype_name() {
    return sizeof(T) == 4 ? "f32" : "f64";
}

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

template <typename T>
void save_checkpoint(const std::string& path, const Model<T>& model) {
    std::ostringstream manifest;
    std::uint64_t offset = 0;
    for (const auto& [name, t] : model.params) {
        manifest << name << " " << dtype_name<T>() << " " << offset << " " << t.numel() << " "
                 << t.rank();
        for (std::int64_t d = 0; d < t.rank(); ++d) manifest << " " << t.dim(d);
        manifest << "\n";
        offset += static_cast<std::uint64_t>(t.numel()) * sizeof(T);
    }
    const std::string config_text = model_config_to_text(model.config);
    const std::string manifest_text = manifest.str();

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open checkpoint for writing: " + path);
    const char version = static_cast<char>(kCheckpointVersion);
    os.write(&version, 1);
    write_u32(os, static_cast<std::uint32_t>(config_text.size()));
    os.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));
    write_u32(os, static_cast<std::uint32_t>(manifest_text.size()));
    os.write(manifest_text.data(), static_cast<std::streamsize>(manifest_text.size()));
    for (const auto& [name, t] : model.params)
        os.write(reinterpret_cast<const char*>(t.data()),
                 static_cast<std::streamsize>(static_cast<std::uint64_t>(t.numel()) * sizeof(T)));
    if (!os) throw DataError("failed writing checkpoint: " + path);
}

template <typename T>
Model<T> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path);
    char version = 0;
    is.read(&version, 1);
    if (!is || static_cast<unsigned char>(version) != kCheckpointVersion)
        throw DataError("unsupported checkpoint version in " + path);
    const std::uint32_t config_len = read_u32(is);
    std::string config_text(config_len, '\0');
    is.read(config_text.data(), config_len);
    const std::uint32_t manifest_len = read_u32(is);
    std::string manifest_text(manifest_len, '\0');
    is.read(manifest_text.data(), manifest_len);
    if (!is) throw DataError("truncated checkpoint header: " + path);

    Model<T> model = build_model<T>(model_config_from_text(config_text));

    std::istringstream ms(manifest_text);
    std::string line;
    std::size_t idx = 0;
    while (std::getline(ms, line)) {
        if (line.empty()) continue;
        if (idx >= model.params.size())
            throw DataError("checkpoint has more tensors than the config builds: " + path);
        auto& [name, t] = model.params[idx];
        std::istringstream ls(line);
        std::string mname, mdtype;
        std::uint64_t moffset = 0;
        std::int64_t mnumel = 0, mrank = 0;
        ls >> mname >> mdtype >> moffset >> mnumel >> mrank;
        Shape mshape(static_cast<std::size_t>(mrank));
        for (auto& d : mshape) ls >> d;
        if (!ls) throw DataError("malformed checkpoint manifest line: '" + line + "'");
        if (mname != name || mdtype != dtype_name<T>() || mnumel != t.numel() ||
            mshape != t.shape())
            throw DataError("checkpoint tensor '" + mname + "' does not match built model '" +
                            name + "' " + shape_str(t.shape()));
        is.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(static_cast<std::uint64_t>(t.numel()) * sizeof(T)));
        if (!is) throw DataError("truncated checkpoint data for '" + name + "'");
        ++idx;
    }
    if (idx != model.params.size())
        throw DataError("checkpoint missing tensors; built model expects " +
                        std::to_string(model.params.size()));
    return model;
}

#define TEXSTAT_INSTANTIATE_MODEL(T)                                                            \
    template Model<T> build_model<T>(const ModelConfig&);                                       \
    template class Model<T>;                                                                    \
    template std::int64_t parameter_count<T>(const Model<T>&);                                  \
    template std::vector<std::string> parameter_names<T>(const Model<T>&);                      \
    template void save_checkpoint<T>(const std::string&, const Model<T>&);                      \
    template Model<T> load_checkpoint<T>(const std::string&);

TEXSTAT_INSTANTIATE_MODEL(float)
TEXSTAT_INSTANTIATE_MODEL(double)

#undef TEXSTAT_INSTANTIATE_MODEL

}  // namespace texstat
