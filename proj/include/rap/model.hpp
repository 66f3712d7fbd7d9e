#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rap/field.hpp"
#include "rap/tensor.hpp"

namespace rap {

enum class Variant { baseline_single_stream, rap_dual_stream, naive_concat };

inline std::string to_string(Variant v) {
    switch (v) {
        case Variant::baseline_single_stream: return "baseline";
        case Variant::rap_dual_stream: return "rap";
        case Variant::naive_concat: return "naive-concat";
    }
    return "baseline";
}

inline Variant variant_from_string(const std::string& s) {
    if (s == "baseline" || s == "baseline_single_stream") return Variant::baseline_single_stream;
    if (s == "rap" || s == "rap_dual_stream") return Variant::rap_dual_stream;
    if (s == "naive-concat" || s == "naive_concat") return Variant::naive_concat;
    throw ConfigError("unknown variant: " + s);
}

struct ArchConfig {
    std::size_t levels = 3;
    std::size_t base_channels = 16;
    std::size_t t_in = 4, t_out = 4, c = 1, h = 32, w = 32;
    Variant variant = Variant::rap_dual_stream;
    std::size_t ref_encoder_depth = 0;  // 0 means equal to levels

    std::size_t ref_depth() const { return ref_encoder_depth == 0 ? levels : ref_encoder_depth; }
    std::size_t level_channels(std::size_t l) const { return base_channels << l; }
    std::size_t query_in_channels() const {
        std::size_t n = t_in * c;
        if (variant == Variant::naive_concat) n += t_out * c;
        return n;
    }
    std::size_t ref_in_channels() const { return t_out * c; }
    std::size_t latent_channels() const { return level_channels(levels - 1); }
    std::size_t ref_latent_channels() const { return level_channels(ref_depth() - 1); }
    bool dual_stream() const { return variant == Variant::rap_dual_stream; }

    void validate() const {
        if (levels < 2) throw ConfigError("need levels >= 2");
        std::size_t factor = std::size_t(1) << (levels - 1);
        if (h % factor != 0 || w % factor != 0)
            throw ConfigError("grid " + std::to_string(h) + "x" + std::to_string(w) +
                              " not divisible by 2^(levels-1) = " + std::to_string(factor));
        if (ref_depth() < 2 || ref_depth() > levels)
            throw ConfigError("ref_encoder_depth must be in [2, levels]");
        if (base_channels < 1 || t_in < 1 || t_out < 1 || c < 1)
            throw ConfigError("all size parameters must be >= 1");
    }
};

inline void to_json(nlohmann::json& j, const ArchConfig& a) {
    j = nlohmann::json{{"levels", a.levels},
                       {"base_channels", a.base_channels},
                       {"t_in", a.t_in},
                       {"t_out", a.t_out},
                       {"c", a.c},
                       {"h", a.h},
                       {"w", a.w},
                       {"variant", to_string(a.variant)},
                       {"ref_encoder_depth", a.ref_encoder_depth}};
}

inline void from_json(const nlohmann::json& j, ArchConfig& a) {
    a.levels = j.value("levels", std::size_t(3));
    a.base_channels = j.value("base_channels", std::size_t(16));
    a.t_in = j.value("t_in", std::size_t(4));
    a.t_out = j.value("t_out", std::size_t(4));
    a.c = j.value("c", std::size_t(1));
    a.h = j.value("h", std::size_t(32));
    a.w = j.value("w", std::size_t(32));
    a.variant = variant_from_string(j.value("variant", "rap"));
    a.ref_encoder_depth = j.value("ref_encoder_depth", std::size_t(0));
}

/// One encoder pathway: per level, a stride-1 conv whose activation is the
/// skip, then a stride-2 conv that halves the grid and doubles channels.
struct EncoderParams {
    std::vector<nn::Conv> conv_a;  // stride 1, emits skip
    std::vector<nn::Conv> conv_b;  // stride 2
};

struct ModelParams {
    ArchConfig cfg;
    EncoderParams enc_query;
    EncoderParams enc_ref;  // empty unless dual stream
    std::vector<nn::Conv> dec_up;  // conv after each nearest-neighbor upsample
    std::vector<nn::Conv> dec_g;   // fusion conv after skip concatenation
    nn::Conv proj;                 // final linear projection to t_out*c
};

namespace detail_model {

inline EncoderParams make_encoder(const ArchConfig& cfg, std::size_t in_ch, std::size_t depth) {
    EncoderParams e;
    std::size_t prev = in_ch;
    for (std::size_t l = 0; l + 1 < depth; ++l) {
        std::size_t ch = cfg.level_channels(l);
        e.conv_a.emplace_back(prev, ch, 1);
        e.conv_b.emplace_back(ch, cfg.level_channels(l + 1), 2);
        prev = cfg.level_channels(l + 1);
    }
    return e;
}

}  // namespace detail_model

/// Zero-initialized parameter set with the shapes dictated by the config.
inline ModelParams make_params(const ArchConfig& cfg) {
    cfg.validate();
    ModelParams p;
    p.cfg = cfg;
    p.enc_query = detail_model::make_encoder(cfg, cfg.query_in_channels(), cfg.levels);
    if (cfg.dual_stream())
        p.enc_ref = detail_model::make_encoder(cfg, cfg.ref_in_channels(), cfg.ref_depth());

    const std::size_t L = cfg.levels;
    std::size_t prev = cfg.latent_channels();
    if (cfg.dual_stream()) prev += cfg.ref_latent_channels();
    const std::size_t skip_mult = cfg.dual_stream() ? 3 : 2;
    for (std::size_t s = 0; s + 1 < L; ++s) {
        std::size_t lev = L - 2 - s;
        std::size_t ch = cfg.level_channels(lev);
        p.dec_up.emplace_back(prev, ch, 1);
        p.dec_g.emplace_back(ch * skip_mult, ch, 1);
        prev = ch;
    }
    p.proj = nn::Conv(cfg.base_channels, cfg.t_out * cfg.c, 1);
    return p;
}

/// Visit every named parameter tensor in a fixed, stable order.
template <typename P, typename F>
void visit_params(P&& params, F&& f) {
    auto visit_conv = [&](const std::string& name, auto&& conv) {
        f(name + ".w", conv.w);
        f(name + ".b", conv.b);
    };
    auto visit_enc = [&](const std::string& name, auto&& enc) {
        for (std::size_t l = 0; l < enc.conv_a.size(); ++l) {
            visit_conv(name + ".a" + std::to_string(l), enc.conv_a[l]);
            visit_conv(name + ".b" + std::to_string(l), enc.conv_b[l]);
        }
    };
    visit_enc("enc_query", params.enc_query);
    visit_enc("enc_ref", params.enc_ref);
    for (std::size_t s = 0; s < params.dec_up.size(); ++s) {
        visit_conv("dec.up" + std::to_string(s), params.dec_up[s]);
        visit_conv("dec.g" + std::to_string(s), params.dec_g[s]);
    }
    visit_conv("proj", params.proj);
}

/// Seeded uniform +-sqrt(1/fan_in) weights, zero biases.
inline ModelParams init_params(const ArchConfig& cfg, std::uint64_t seed) {
    ModelParams p = make_params(cfg);
    std::mt19937_64 rng(seed);
    auto init_conv = [&](nn::Conv& conv) {
        float bound = 1.0f / std::sqrt(static_cast<float>(conv.fan_in()));
        std::uniform_real_distribution<float> dist(-bound, bound);
        for (float& x : conv.w) x = dist(rng);
        // biases stay zero
    };
    auto init_enc = [&](EncoderParams& e) {
        for (std::size_t l = 0; l < e.conv_a.size(); ++l) {
            init_conv(e.conv_a[l]);
            init_conv(e.conv_b[l]);
        }
    };
    init_enc(p.enc_query);
    init_enc(p.enc_ref);
    for (std::size_t s = 0; s < p.dec_up.size(); ++s) {
        init_conv(p.dec_up[s]);
        init_conv(p.dec_g[s]);
    }
    init_conv(p.proj);
    return p;
}

// ---- encode / fuse / decode ----

struct EncodeOutput {
    nn::Tensor latent;
    std::vector<nn::Tensor> skips;  // finest first
};

namespace detail_model {

struct ConvTrace {
    nn::Tensor in;
    nn::Tensor pre;  // pre-activation output
};

struct EncoderTrace {
    std::vector<ConvTrace> a, b;
    std::vector<nn::Tensor> pool_in;  // avg-pool inputs when the encoder is truncated
    EncodeOutput out;
};

/// Run one encoder; pools the latent down to full depth when truncated,
/// and zero-pads the missing deep skips.
inline EncoderTrace encode_traced(const ArchConfig& cfg, const EncoderParams& enc,
                                  const nn::Tensor& input, std::size_t depth) {
    EncoderTrace tr;
    nn::Tensor x = input;
    for (std::size_t l = 0; l + 1 < depth; ++l) {
        ConvTrace ca;
        ca.in = std::move(x);
        ca.pre = nn::conv_forward(enc.conv_a[l], ca.in);
        nn::Tensor a = nn::leaky_relu(ca.pre);
        tr.out.skips.push_back(a);
        ConvTrace cb;
        cb.in = std::move(a);
        cb.pre = nn::conv_forward(enc.conv_b[l], cb.in);
        x = nn::leaky_relu(cb.pre);
        tr.a.push_back(std::move(ca));
        tr.b.push_back(std::move(cb));
    }
    for (std::size_t l = depth; l <= cfg.levels - 1 && depth < cfg.levels; ++l) {
        tr.pool_in.push_back(x);
        x = nn::avgpool2(x);
    }
    for (std::size_t l = depth - 1; l + 1 < cfg.levels; ++l)
        tr.out.skips.emplace_back(cfg.level_channels(l), cfg.h >> l, cfg.w >> l, 0.0f);
    tr.out.latent = std::move(x);
    return tr;
}

}  // namespace detail_model

/// Encoder output for an already channel-folded input tensor.
inline EncodeOutput encode(const ArchConfig& cfg, const EncoderParams& enc,
                           const nn::Tensor& input, std::size_t depth) {
    return detail_model::encode_traced(cfg, enc, input, depth).out;
}

/// Channel-wise fusion; the query block comes first.
inline nn::Tensor fuse(const nn::Tensor& hq, const nn::Tensor& hr) {
    return nn::concat_channels(hq, hr);
}

// ---- full forward pass ----

struct ForwardCache {
    nn::Tensor input_q;
    detail_model::EncoderTrace enc_q;
    std::optional<detail_model::EncoderTrace> enc_r;
    nn::Tensor fused;
    struct Stage {
        nn::Tensor z_in;  // input to upsample
        detail_model::ConvTrace up;
        detail_model::ConvTrace g;
    };
    std::vector<Stage> stages;
    detail_model::ConvTrace proj;
};

namespace detail_model {

inline nn::Tensor fold(const Field& f) {
    nn::Tensor t(f.t() * f.c(), f.h(), f.w());
    std::memcpy(t.data(), f.data(), f.size() * sizeof(float));
    return t;
}

inline Field unfold(const nn::Tensor& t, std::size_t t_out, std::size_t c) {
    Field f(t_out, c, t.h, t.w);
    std::memcpy(f.data(), t.data(), t.size() * sizeof(float));
    return f;
}

}  // namespace detail_model

inline Field forward(const ModelParams& params, const Field& x_query, const Field* y_ref,
                     ForwardCache* cache = nullptr) {
    const ArchConfig& cfg = params.cfg;
    const bool wants_ref = cfg.variant != Variant::baseline_single_stream;
    if (wants_ref && y_ref == nullptr)
        throw UsageError("variant " + to_string(cfg.variant) + " requires y_ref");
    if (!wants_ref && y_ref != nullptr)
        throw UsageError("baseline variant takes no y_ref");
    if (x_query.t() != cfg.t_in || x_query.c() != cfg.c || x_query.h() != cfg.h ||
        x_query.w() != cfg.w)
        throw DimensionError("query shape " + x_query.shape_str() + " does not match config");
    if (y_ref && (y_ref->t() != cfg.t_out || y_ref->c() != cfg.c || y_ref->h() != cfg.h ||
                  y_ref->w() != cfg.w))
        throw DimensionError("reference shape " + y_ref->shape_str() +
                             " does not match config");

    using namespace detail_model;
    nn::Tensor qin = fold(x_query);
    if (cfg.variant == Variant::naive_concat)
        qin = nn::concat_channels(qin, fold(*y_ref));

    ForwardCache local;
    ForwardCache& cc = cache ? *cache : local;
    cc.stages.clear();
    cc.enc_r.reset();

    cc.enc_q = encode_traced(cfg, params.enc_query, qin, cfg.levels);
    cc.input_q = std::move(qin);

    if (cfg.dual_stream()) {
        cc.enc_r = encode_traced(cfg, params.enc_ref, fold(*y_ref), cfg.ref_depth());
        cc.fused = fuse(cc.enc_q.out.latent, cc.enc_r->out.latent);
    } else {
        cc.fused = cc.enc_q.out.latent;
    }

    nn::Tensor z = cc.fused;
    const std::size_t L = cfg.levels;
    for (std::size_t s = 0; s + 1 < L; ++s) {
        std::size_t lev = L - 2 - s;
        ForwardCache::Stage st;
        st.z_in = std::move(z);
        st.up.in = nn::upsample2(st.z_in);
        st.up.pre = nn::conv_forward(params.dec_up[s], st.up.in);
        nn::Tensor up = nn::leaky_relu(st.up.pre);
        nn::Tensor cat = nn::concat_channels(up, cc.enc_q.out.skips[lev]);
        if (cfg.dual_stream()) cat = nn::concat_channels(cat, cc.enc_r->out.skips[lev]);
        st.g.in = std::move(cat);
        st.g.pre = nn::conv_forward(params.dec_g[s], st.g.in);
        z = nn::leaky_relu(st.g.pre);
        cc.stages.push_back(std::move(st));
    }
    cc.proj.in = std::move(z);
    cc.proj.pre = nn::conv_forward(params.proj, cc.proj.in);
    Field out = unfold(cc.proj.pre, cfg.t_out, cfg.c);
    if (!out.all_finite()) throw DivergenceError("forward produced non-finite output", 0);
    return out;
}

/// Standalone decoder pass (inference only); skips_r may be null for the
/// single-stream variants.
inline Field decode(const ModelParams& params, const nn::Tensor& fused,
                    const std::vector<nn::Tensor>& skips_q,
                    const std::vector<nn::Tensor>* skips_r) {
    const ArchConfig& cfg = params.cfg;
    const std::size_t L = cfg.levels;
    if (skips_q.size() != L - 1 || (skips_r && skips_r->size() != L - 1))
        throw ConfigError("decode needs exactly levels-1 skip tensors per stream");
    nn::Tensor z = fused;
    for (std::size_t s = 0; s + 1 < L; ++s) {
        std::size_t lev = L - 2 - s;
        nn::Tensor up = nn::leaky_relu(nn::conv_forward(params.dec_up[s], nn::upsample2(z)));
        nn::Tensor cat = nn::concat_channels(up, skips_q[lev]);
        if (skips_r) cat = nn::concat_channels(cat, (*skips_r)[lev]);
        z = nn::leaky_relu(nn::conv_forward(params.dec_g[s], cat));
    }
    return detail_model::unfold(nn::conv_forward(params.proj, z), cfg.t_out, cfg.c);
}

// ---- backward ----

namespace detail_model {

inline void encoder_backward(const ArchConfig& cfg, const EncoderParams& enc,
                             const EncoderTrace& tr, nn::Tensor dlatent,
                             std::vector<nn::Tensor>& dskips, EncoderParams& grads) {
    // undo the truncation pools first
    for (std::size_t i = tr.pool_in.size(); i-- > 0;)
        dlatent = nn::avgpool2_backward(dlatent, tr.pool_in[i].h, tr.pool_in[i].w);
    nn::Tensor dx = std::move(dlatent);
    for (std::size_t l = tr.b.size(); l-- > 0;) {
        nn::leaky_relu_backward(tr.b[l].pre, dx);
        nn::Tensor da(tr.b[l].in.c, tr.b[l].in.h, tr.b[l].in.w);
        nn::conv_backward(enc.conv_b[l], tr.b[l].in, dx, da, grads.conv_b[l]);
        if (l < dskips.size() && dskips[l].size() == da.size())
            for (std::size_t i = 0; i < da.size(); ++i) da.v[i] += dskips[l].v[i];
        nn::leaky_relu_backward(tr.a[l].pre, da);
        nn::Tensor dprev(tr.a[l].in.c, tr.a[l].in.h, tr.a[l].in.w);
        nn::conv_backward(enc.conv_a[l], tr.a[l].in, da, dprev, grads.conv_a[l]);
        dx = std::move(dprev);
    }
}

}  // namespace detail_model

/// Exact reverse-mode gradients of <upstream, output> w.r.t. all parameters.
/// `cache` must come from a forward pass with the same params and inputs.
inline ModelParams backward(const ModelParams& params, const ForwardCache& cache,
                            const Field& upstream) {
    const ArchConfig& cfg = params.cfg;
    if (cache.stages.empty()) throw UsageError("backward without a cached forward pass");
    using namespace detail_model;

    ModelParams grads = make_params(cfg);
    nn::Tensor dz = fold(upstream);

    nn::Tensor dproj_in(cache.proj.in.c, cache.proj.in.h, cache.proj.in.w);
    nn::conv_backward(params.proj, cache.proj.in, dz, dproj_in, grads.proj);
    dz = std::move(dproj_in);

    const std::size_t L = cfg.levels;
    std::vector<nn::Tensor> dskips_q(L - 1), dskips_r(cfg.dual_stream() ? L - 1 : 0);
    for (std::size_t s = L - 1; s-- > 0;) {
        std::size_t lev = L - 2 - s;
        const auto& st = cache.stages[s];
        nn::leaky_relu_backward(st.g.pre, dz);
        nn::Tensor dcat(st.g.in.c, st.g.in.h, st.g.in.w);
        nn::conv_backward(params.dec_g[s], st.g.in, dz, dcat, grads.dec_g[s]);

        std::size_t ch = cfg.level_channels(lev);
        nn::Tensor dup, drest;
        nn::split_channels(dcat, ch, dup, drest);
        if (cfg.dual_stream()) {
            nn::split_channels(drest, ch, dskips_q[lev], dskips_r[lev]);
        } else {
            dskips_q[lev] = std::move(drest);
        }

        nn::leaky_relu_backward(st.up.pre, dup);
        nn::Tensor dups(st.up.in.c, st.up.in.h, st.up.in.w);
        nn::conv_backward(params.dec_up[s], st.up.in, dup, dups, grads.dec_up[s]);
        dz = nn::upsample2_backward(dups, st.z_in.h, st.z_in.w);
    }

    if (cfg.dual_stream()) {
        nn::Tensor dlatent_q, dlatent_r;
        nn::split_channels(dz, cfg.latent_channels(), dlatent_q, dlatent_r);
        encoder_backward(cfg, params.enc_query, cache.enc_q, std::move(dlatent_q), dskips_q,
                         grads.enc_query);
        // gradients flowing into the zero-padded skips have nowhere to go
        std::vector<nn::Tensor> real_ref_skips(dskips_r.begin(),
                                               dskips_r.begin() + (cfg.ref_depth() - 1));
        encoder_backward(cfg, params.enc_ref, *cache.enc_r, std::move(dlatent_r),
                         real_ref_skips, grads.enc_ref);
    } else {
        encoder_backward(cfg, params.enc_query, cache.enc_q, std::move(dz), dskips_q,
                         grads.enc_query);
    }
    return grads;
}

// ---- .rapw checkpoint format ----
// magic "RAPW" | version u32=1 | header_len u64 | JSON header | payloads

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const ModelParams& params, const std::string& path) {
    nlohmann::json header;
    header["config"] = params.cfg;
    nlohmann::json tensors = nlohmann::json::array();
    std::uint64_t offset = 0;
    visit_params(params, [&](const std::string& name, const std::vector<float>& v) {
        tensors.push_back({{"name", name}, {"count", v.size()}, {"offset", offset}});
        offset += v.size() * sizeof(float);
    });
    header["tensors"] = tensors;
    std::string hs = header.dump();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.write("RAPW", 4);
    detail::put_u32(os, kCheckpointVersion);
    detail::put_u64(os, hs.size());
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    visit_params(params, [&](const std::string&, const std::vector<float>& v) {
        detail::put_floats(os, v.data(), v.size());
    });
    if (!os) throw IoError("write failed: " + path);
}

inline ModelParams load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path);
    char magic[4];
    is.read(magic, 4);
    if (is.gcount() != 4 || std::memcmp(magic, "RAPW", 4) != 0)
        throw FormatError("bad magic, expected RAPW", 0);
    std::uint32_t version = detail::get_u32(is, 4, "version");
    if (version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
    std::uint64_t hlen = detail::get_u64(is, 8, "header length");
    std::string hs(hlen, '\0');
    is.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (static_cast<std::uint64_t>(is.gcount()) != hlen)
        throw FormatError("truncated checkpoint header", 16);
    nlohmann::json header = nlohmann::json::parse(hs);

    ModelParams params = make_params(header.at("config").get<ArchConfig>());
    std::size_t idx = 0;
    const auto& tensors = header.at("tensors");
    std::size_t offset = 16 + hlen;
    visit_params(params, [&](const std::string& name, std::vector<float>& v) {
        if (idx >= tensors.size() || tensors[idx].at("name") != name ||
            tensors[idx].at("count") != v.size())
            throw FormatError("checkpoint tensor manifest mismatch at " + name, offset);
        detail::get_floats(is, v.data(), v.size(), offset);
        offset += v.size() * sizeof(float);
        ++idx;
    });
    return params;
}

}  // namespace rap
