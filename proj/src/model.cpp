#include "separator/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "separator/corpus.hpp"
#include "separator/errors.hpp"
#include "separator/ops.hpp"

namespace separator {

using ad::Shape;
using ad::Tensor;
using nlohmann::json;

// ---------------------------------------------------------------------------
// ModelConfig

std::vector<std::string> ModelConfig::validate() const {
    std::vector<std::string> errs;
    if (d_model == 0) errs.push_back("d_model must be positive");
    if (heads == 0) errs.push_back("heads must be positive");
    if (heads != 0 && d_model % heads != 0)
        errs.push_back("d_model must be divisible by heads");
    if (d_model % 2 != 0) errs.push_back("d_model must be even");
    if (h_sem == 0) errs.push_back("h_sem must be positive");
    if (h_syn == 0) errs.push_back("h_syn must be positive");
    if (h_sem + h_syn != heads) errs.push_back("h_sem + h_syn must equal heads");
    if (enc_layers == 0) errs.push_back("enc_layers must be positive");
    if (dec_layers == 0) errs.push_back("dec_layers must be positive");
    if (ff_dim == 0) errs.push_back("ff_dim must be positive");
    if (quant_heads == 0) errs.push_back("quant_heads must be positive");
    if (codebook_size < 2) errs.push_back("codebook_size must be at least 2");
    if (d_code == 0) errs.push_back("d_code must be positive");
    if (lambda < 0.0) errs.push_back("lambda must be non-negative");
    if (!(ema_gamma > 0.0 && ema_gamma <= 1.0))
        errs.push_back("ema_gamma must be in (0, 1]");
    if (ema_eps <= 0.0) errs.push_back("ema_eps must be positive");
    if (!(token_dropout >= 0.0 && token_dropout < 1.0))
        errs.push_back("token_dropout must be in [0, 1)");
    if (beam_width == 0) errs.push_back("beam_width must be positive");
    if (max_len < 2) errs.push_back("max_len must be at least 2");
    if (!(kl_warmup_frac >= 0.0 && kl_warmup_frac <= 1.0))
        errs.push_back("kl_warmup_frac must be in [0, 1]");
    if (!(tau_frac >= 0.0 && tau_frac <= 1.0))
        errs.push_back("tau_frac must be in [0, 1]");
    if (tau_start <= 0.0) errs.push_back("tau_start must be positive");
    if (tau_end <= 0.0) errs.push_back("tau_end must be positive");
    if (mode != "separator" && mode != "vae_baseline" && mode != "ae_baseline")
        errs.push_back("mode must be one of separator, vae_baseline, ae_baseline");
    return errs;
}

json ModelConfig::to_json() const {
    return json{{"d_model", d_model},
                {"heads", heads},
                {"enc_layers", enc_layers},
                {"dec_layers", dec_layers},
                {"ff_dim", ff_dim},
                {"h_sem", h_sem},
                {"h_syn", h_syn},
                {"quant_heads", quant_heads},
                {"codebook_size", codebook_size},
                {"d_code", d_code},
                {"lambda", lambda},
                {"ema_gamma", ema_gamma},
                {"ema_eps", ema_eps},
                {"token_dropout", token_dropout},
                {"beam_width", beam_width},
                {"max_len", max_len},
                {"kl_warmup_frac", kl_warmup_frac},
                {"tau_start", tau_start},
                {"tau_end", tau_end},
                {"tau_frac", tau_frac},
                {"mode", mode}};
}

ModelConfig ModelConfig::from_json(const json& j) {
    std::vector<std::string> errs;
    ModelConfig c;
    if (!j.is_object()) throw validation_error("model config must be a JSON object");

    auto get_size = [&](const char* key, size_t& dst) {
        if (!j.contains(key)) return;
        const json& v = j.at(key);
        if (v.is_number_unsigned() || (v.is_number_integer() && v.get<int64_t>() >= 0))
            dst = v.get<size_t>();
        else
            errs.push_back(std::string(key) + " must be a non-negative integer");
    };
    auto get_double = [&](const char* key, double& dst) {
        if (!j.contains(key)) return;
        const json& v = j.at(key);
        if (v.is_number())
            dst = v.get<double>();
        else
            errs.push_back(std::string(key) + " must be a number");
    };

    static const std::set<std::string> known = {
        "d_model",       "heads",         "enc_layers", "dec_layers",
        "ff_dim",        "h_sem",         "h_syn",      "quant_heads",
        "codebook_size", "d_code",        "lambda",     "ema_gamma",
        "ema_eps",       "token_dropout", "beam_width", "max_len",
        "kl_warmup_frac", "tau_start",    "tau_end",    "tau_frac",
        "mode"};
    for (const auto& item : j.items())
        if (known.find(item.key()) == known.end())
            errs.push_back("unknown key: " + item.key());

    get_size("d_model", c.d_model);
    get_size("heads", c.heads);
    get_size("enc_layers", c.enc_layers);
    get_size("dec_layers", c.dec_layers);
    get_size("ff_dim", c.ff_dim);
    get_size("h_sem", c.h_sem);
    get_size("h_syn", c.h_syn);
    get_size("quant_heads", c.quant_heads);
    get_size("codebook_size", c.codebook_size);
    get_size("d_code", c.d_code);
    get_double("lambda", c.lambda);
    get_double("ema_gamma", c.ema_gamma);
    get_double("ema_eps", c.ema_eps);
    get_double("token_dropout", c.token_dropout);
    get_size("beam_width", c.beam_width);
    get_size("max_len", c.max_len);
    get_double("kl_warmup_frac", c.kl_warmup_frac);
    get_double("tau_start", c.tau_start);
    get_double("tau_end", c.tau_end);
    get_double("tau_frac", c.tau_frac);
    if (j.contains("mode")) {
        if (j.at("mode").is_string())
            c.mode = j.at("mode").get<std::string>();
        else
            errs.push_back("mode must be a string");
    }

    for (const auto& e : c.validate()) errs.push_back(e);
    if (!errs.empty()) {
        std::string msg = "invalid model config: ";
        for (size_t i = 0; i < errs.size(); ++i) {
            if (i) msg += "; ";
            msg += errs[i];
        }
        throw validation_error(msg);
    }
    return c;
}

QuantizerConfig ModelConfig::quantizer_config() const {
    QuantizerConfig q;
    q.heads = quant_heads;
    q.K = codebook_size;
    q.d_code = d_code;
    q.lambda = lambda;
    q.gamma = ema_gamma;
    q.eps = ema_eps;
    return q;
}

// ---------------------------------------------------------------------------
// Construction

namespace {

std::vector<double> sin_positions(size_t T, size_t D) {
    std::vector<double> pos(T * D);
    for (size_t t = 0; t < T; ++t)
        for (size_t i = 0; i < D / 2; ++i) {
            const double div = std::pow(10000.0, (2.0 * static_cast<double>(i)) /
                                                     static_cast<double>(D));
            const double x = static_cast<double>(t) / div;
            pos[t * D + 2 * i] = std::sin(x);
            pos[t * D + 2 * i + 1] = std::cos(x);
        }
    return pos;
}

}  // namespace

namespace {

ModelConfig validated(ModelConfig cfg) {
    const auto errs = cfg.validate();
    if (!errs.empty()) {
        std::string msg = "invalid model config: ";
        for (size_t i = 0; i < errs.size(); ++i) {
            if (i) msg += "; ";
            msg += errs[i];
        }
        throw validation_error(msg);
    }
    return cfg;
}

}  // namespace

SeparatorModel::SeparatorModel(ModelConfig cfg, size_t vocab_size, uint64_t seed)
    : cfg_(validated(std::move(cfg))), vocab_size_(vocab_size),
      quant_(cfg_.quantizer_config()) {
    if (vocab_size_ <= 4)
        throw validation_error("vocab must contain at least one regular token");

    Rng rng(seed);
    auto xavier = [&](Shape s) {
        const double lim = std::sqrt(6.0 / static_cast<double>(s[0] + s[1]));
        std::vector<double> v(ad::numel(s));
        for (auto& x : v) x = (2.0 * rng.uniform() - 1.0) * lim;
        return Tensor::from_values(std::move(s), std::move(v));
    };
    auto zeros = [](Shape s) { return Tensor::zeros(std::move(s)); };
    auto ones = [](Shape s) {
        return Tensor::from_values(s, std::vector<double>(ad::numel(s), 1.0));
    };
    auto add_affine = [&](const std::string& prefix, size_t in, size_t out) {
        params_.add(prefix + ".w", xavier({in, out}));
        params_.add(prefix + ".b", zeros({out}));
    };
    auto add_ln = [&](const std::string& prefix) {
        params_.add(prefix + ".gain", ones({cfg_.d_model}));
        params_.add(prefix + ".bias", zeros({cfg_.d_model}));
    };
    auto add_attn = [&](const std::string& prefix) {
        add_affine(prefix + ".q", cfg_.d_model, cfg_.d_model);
        add_affine(prefix + ".k", cfg_.d_model, cfg_.d_model);
        add_affine(prefix + ".v", cfg_.d_model, cfg_.d_model);
        add_affine(prefix + ".o", cfg_.d_model, cfg_.d_model);
    };
    auto add_ff = [&](const std::string& prefix) {
        add_affine(prefix + ".in", cfg_.d_model, cfg_.ff_dim);
        add_affine(prefix + ".out", cfg_.ff_dim, cfg_.d_model);
    };

    {
        std::vector<double> e(vocab_size_ * cfg_.d_model);
        for (auto& x : e) x = rng.normal(0.0, 0.02);
        params_.add("embed.tok", Tensor::from_values({vocab_size_, cfg_.d_model},
                                                     std::move(e)));
    }
    for (size_t l = 0; l < cfg_.enc_layers; ++l) {
        const std::string p = "enc.l" + std::to_string(l);
        add_attn(p + ".attn");
        add_ln(p + ".ln1");
        add_ff(p + ".ff");
        add_ln(p + ".ln2");
    }
    for (size_t h = 0; h < cfg_.heads; ++h) {
        const std::string p = "pool.h" + std::to_string(h);
        params_.add(p + ".k", xavier({cfg_.d_head(), 1}));
        params_.add(p + ".v", xavier({cfg_.d_head(), cfg_.d_head()}));
    }
    if (cfg_.mode == "separator") {
        add_affine("var.mu", cfg_.d_sem(), cfg_.d_sem());
        add_affine("var.sigma", cfg_.d_sem(), cfg_.d_sem());
        add_affine("synproj", cfg_.d_syn(), cfg_.d_zsyn());
    } else if (cfg_.mode == "vae_baseline") {
        add_affine("var.mu", cfg_.d_sem(), cfg_.d_sem());
        add_affine("var.sigma", cfg_.d_sem(), cfg_.d_sem());
        add_affine("var2.mu", cfg_.d_syn(), cfg_.d_zsyn());
        add_affine("var2.sigma", cfg_.d_syn(), cfg_.d_zsyn());
    } else {
        add_affine("synproj", cfg_.d_syn(), cfg_.d_zsyn());
    }
    add_affine("mem.sem", cfg_.d_sem(), cfg_.d_model);
    add_affine("mem.syn", cfg_.d_zsyn(), cfg_.d_model);
    for (size_t l = 0; l < cfg_.dec_layers; ++l) {
        const std::string p = "dec.l" + std::to_string(l);
        add_attn(p + ".self");
        add_ln(p + ".ln1");
        add_attn(p + ".cross");
        add_ln(p + ".ln2");
        add_ff(p + ".ff");
        add_ln(p + ".ln3");
    }
    add_affine("out", cfg_.d_model, vocab_size_);
}

// ---------------------------------------------------------------------------
// Building blocks

Tensor SeparatorModel::param(const std::string& name) const {
    const Tensor* t = params_.find(name);
    if (!t) throw std::logic_error("SeparatorModel: missing parameter " + name);
    return *t;
}

Tensor SeparatorModel::affine(const Tensor& x, const std::string& prefix) const {
    return ad::add(ad::matmul(x, param(prefix + ".w")), param(prefix + ".b"));
}

Tensor SeparatorModel::layer_norm_named(const Tensor& x,
                                        const std::string& prefix) const {
    return ad::layer_norm(x, param(prefix + ".gain"), param(prefix + ".bias"));
}

Tensor SeparatorModel::embed(const std::vector<int>& flat_ids, size_t B,
                             size_t T) const {
    Tensor e = ad::embedding_lookup(param("embed.tok"), flat_ids, {B, T});
    e = ad::scale(e, std::sqrt(static_cast<double>(cfg_.d_model)));
    Tensor pos = Tensor::from_values({T, cfg_.d_model}, sin_positions(T, cfg_.d_model));
    return ad::add(e, pos);
}

Tensor SeparatorModel::attention(const Tensor& q_in, const Tensor& kv_in,
                                 const std::string& prefix,
                                 const std::vector<uint8_t>& mask) const {
    const size_t H = cfg_.heads;
    Tensor q = ad::split_heads(affine(q_in, prefix + ".q"), H);
    Tensor k = ad::split_heads(affine(kv_in, prefix + ".k"), H);
    Tensor v = ad::split_heads(affine(kv_in, prefix + ".v"), H);
    Tensor scores = ad::scale(ad::bmm(q, k, /*transpose_b=*/true),
                              1.0 / std::sqrt(static_cast<double>(cfg_.d_head())));
    Tensor probs = mask.empty() ? ad::softmax_last(scores)
                                : ad::softmax_last_masked(scores, mask);
    Tensor ctx = ad::merge_heads(ad::bmm(probs, v), H);
    return affine(ctx, prefix + ".o");
}

Tensor SeparatorModel::encoder_layer(const Tensor& x, size_t layer,
                                     const std::vector<uint8_t>& self_mask) const {
    const std::string p = "enc.l" + std::to_string(layer);
    Tensor a = attention(x, x, p + ".attn", self_mask);
    Tensor h = layer_norm_named(ad::add(x, a), p + ".ln1");
    Tensor f = affine(ad::relu(affine(h, p + ".ff.in")), p + ".ff.out");
    return layer_norm_named(ad::add(h, f), p + ".ln2");
}

SeparatorModel::Encoded SeparatorModel::encode(
    const std::vector<std::vector<int>>& ids) {
    const size_t B = ids.size();
    if (B == 0) throw std::invalid_argument("encode: empty batch");
    std::vector<size_t> lens(B);
    size_t T = 0;
    for (size_t b = 0; b < B; ++b) {
        if (ids[b].empty()) throw std::invalid_argument("encode: empty sequence");
        size_t L = ids[b].size();
        if (L > cfg_.max_len) {
            L = cfg_.max_len;
            ++truncations_;
        }
        lens[b] = L;
        T = std::max(T, L);
    }
    std::vector<int> flat(B * T, Vocab::PAD);
    Encoded enc;
    enc.batch = B;
    enc.T = T;
    enc.mask.assign(B * T, 0);
    for (size_t b = 0; b < B; ++b)
        for (size_t t = 0; t < lens[b]; ++t) {
            flat[b * T + t] = ids[b][t];
            enc.mask[b * T + t] = 1;
        }
    // Self-attention mask: every query may look at every real key.
    const size_t H = cfg_.heads;
    std::vector<uint8_t> self_mask(B * H * T * T);
    for (size_t b = 0; b < B; ++b)
        for (size_t h = 0; h < H; ++h)
            for (size_t i = 0; i < T; ++i)
                for (size_t j = 0; j < T; ++j)
                    self_mask[((b * H + h) * T + i) * T + j] = enc.mask[b * T + j];
    Tensor x = embed(flat, B, T);
    for (size_t l = 0; l < cfg_.enc_layers; ++l) x = encoder_layer(x, l, self_mask);
    enc.h = x;
    return enc;
}

Tensor SeparatorModel::pool(const Encoded& enc) {
    const size_t B = enc.batch, T = enc.T, dh = cfg_.d_head();
    std::vector<Tensor> pooled;
    pooled.reserve(cfg_.heads);
    for (size_t h = 0; h < cfg_.heads; ++h) {
        const std::string p = "pool.h" + std::to_string(h);
        Tensor xs = ad::slice(enc.h, 2, h * dh, dh);          // [B, T, dh]
        Tensor scores = ad::reshape(ad::matmul(xs, param(p + ".k")), {B, T});
        Tensor alpha = ad::softmax_last_masked(scores, enc.mask);
        Tensor vals = ad::matmul(xs, param(p + ".v"));        // [B, T, dh]
        Tensor ph = ad::bmm(ad::reshape(alpha, {B, 1, T}), vals);
        pooled.push_back(ad::reshape(ph, {B, dh}));
    }
    return cfg_.heads == 1 ? pooled[0] : ad::concat(pooled, 1);
}

SeparatorModel::VarOut SeparatorModel::variational(const Tensor& e,
                                                   const std::string& prefix,
                                                   bool training, Rng* rng) {
    const size_t B = e.shape()[0];
    VarOut out;
    out.mu = affine(e, prefix + ".mu");
    out.sigma = ad::add_const(ad::softplus(affine(e, prefix + ".sigma")), 1e-6);
    if (training) {
        if (!rng)
            throw std::invalid_argument("variational: rng required in training mode");
        std::vector<double> eps(out.mu.size());
        for (auto& x : eps) x = rng->normal();
        Tensor eps_t = Tensor::from_values(out.mu.shape(), std::move(eps));
        out.z = ad::add(out.mu, ad::mul(out.sigma, eps_t));
    } else {
        out.z = out.mu;
    }
    // KL(N(mu, sigma^2) || N(0, 1)), summed over dims, averaged over the batch.
    Tensor t = ad::add(ad::mul(out.mu, out.mu), ad::mul(out.sigma, out.sigma));
    t = ad::add_const(t, -1.0);
    t = ad::add(t, ad::scale(ad::log_(out.sigma), -2.0));
    out.l_kl = ad::scale(ad::sum_all(t), 0.5 / static_cast<double>(B));
    return out;
}

Tensor SeparatorModel::build_memory(const Tensor& z_sem, const Tensor& z_syn) const {
    const size_t B = z_sem.shape()[0];
    Tensor ms = ad::reshape(affine(z_sem, "mem.sem"), {B, 1, cfg_.d_model});
    Tensor my = ad::reshape(affine(z_syn, "mem.syn"), {B, 1, cfg_.d_model});
    return ad::concat({ms, my}, 1);
}

Tensor SeparatorModel::decoder_stack(const std::vector<int>& flat_ids, size_t B,
                                     size_t T, const Tensor& memory) const {
    const size_t H = cfg_.heads;
    std::vector<uint8_t> causal(B * H * T * T);
    for (size_t b = 0; b < B; ++b)
        for (size_t h = 0; h < H; ++h)
            for (size_t i = 0; i < T; ++i)
                for (size_t j = 0; j < T; ++j)
                    causal[((b * H + h) * T + i) * T + j] = j <= i ? 1 : 0;
    static const std::vector<uint8_t> no_mask;
    Tensor x = embed(flat_ids, B, T);
    for (size_t l = 0; l < cfg_.dec_layers; ++l) {
        const std::string p = "dec.l" + std::to_string(l);
        Tensor a = attention(x, x, p + ".self", causal);
        x = layer_norm_named(ad::add(x, a), p + ".ln1");
        Tensor c = attention(x, memory, p + ".cross", no_mask);
        x = layer_norm_named(ad::add(x, c), p + ".ln2");
        Tensor f = affine(ad::relu(affine(x, p + ".ff.in")), p + ".ff.out");
        x = layer_norm_named(ad::add(x, f), p + ".ln3");
    }
    return x;
}

Tensor SeparatorModel::decode_teacher_forced(const Tensor& z_sem, const Tensor& z_syn,
                                             const std::vector<std::vector<int>>& y,
                                             bool training, Rng* rng) {
    const size_t B = y.size();
    if (B == 0 || z_sem.shape()[0] != B || z_syn.shape()[0] != B)
        throw std::invalid_argument("decode_teacher_forced: batch mismatch");
    std::vector<size_t> lens(B);
    size_t T = 0;
    for (size_t b = 0; b < B; ++b) {
        if (y[b].empty())
            throw std::invalid_argument("decode_teacher_forced: empty target");
        size_t L = y[b].size();
        if (L > cfg_.max_len - 1) {
            L = cfg_.max_len - 1;
            ++truncations_;
        }
        lens[b] = L;
        T = std::max(T, L + 1);  // BOS + tokens
    }
    const bool drop = training && cfg_.token_dropout > 0.0;
    if (drop && !rng)
        throw std::invalid_argument("decode_teacher_forced: rng required for dropout");
    std::vector<int> dec_in(B * T, Vocab::PAD);
    std::vector<int> targets(B * T, Vocab::PAD);
    std::vector<double> weights(B * T, 0.0);
    for (size_t b = 0; b < B; ++b) {
        dec_in[b * T] = Vocab::BOS;
        for (size_t t = 0; t < lens[b]; ++t) {
            int tok = y[b][t];
            if (drop && rng->bernoulli(cfg_.token_dropout)) tok = Vocab::UNK;
            dec_in[b * T + t + 1] = tok;
            targets[b * T + t] = y[b][t];
            weights[b * T + t] = 1.0;
        }
        targets[b * T + lens[b]] = Vocab::EOS;
        weights[b * T + lens[b]] = 1.0;
    }
    Tensor memory = build_memory(z_sem, z_syn);
    Tensor x = decoder_stack(dec_in, B, T, memory);
    Tensor logits = ad::reshape(affine(x, "out"), {B * T, vocab_size_});
    return ad::cross_entropy_logits(logits, targets, weights);
}

// ---------------------------------------------------------------------------
// Full forward

SeparatorModel::Forward SeparatorModel::forward(const Batch& b, bool training,
                                                double beta, Rng* rng) {
    const size_t B = b.x_sem.size();
    if (B == 0 || b.y.size() != B)
        throw std::invalid_argument("forward: batch size mismatch");
    if (cfg_.mode == "separator" && b.x_syn.size() != B)
        throw std::invalid_argument("forward: x_syn size mismatch");

    Forward out;
    out.batch = B;
    Encoded es = encode(b.x_sem);
    Tensor ps = pool(es);
    out.pooled_sem_pass = ps;
    Tensor e_sem = ad::slice(ps, 1, 0, cfg_.d_sem());

    Tensor z_sem, z_syn;
    Tensor l_kl = Tensor::scalar(0.0);
    Tensor l_cstr = Tensor::scalar(0.0);
    if (cfg_.mode == "separator") {
        Encoded ey = encode(b.x_syn);
        Tensor py = pool(ey);
        out.pooled_syn_pass = py;
        Tensor e_syn = ad::slice(py, 1, cfg_.d_sem(), cfg_.d_syn());
        VarOut v = variational(e_sem, "var", training, rng);
        z_sem = v.z;
        l_kl = v.l_kl;
        Tensor sub = affine(e_syn, "synproj");
        if (training && !quant_.initialized()) {
            if (!rng)
                throw std::invalid_argument("forward: rng required to seed codebooks");
            quant_.init_from_batch(sub.values(), B, *rng);
        }
        auto qr = quant_.quantize(sub);
        z_syn = qr.z_syn;
        l_cstr = qr.l_cstr;
        out.codes = qr.assignment.codes;
        out.syn_sub = sub.values();
    } else if (cfg_.mode == "vae_baseline") {
        out.pooled_syn_pass = ps;
        Tensor e_syn = ad::slice(ps, 1, cfg_.d_sem(), cfg_.d_syn());
        VarOut v1 = variational(e_sem, "var", training, rng);
        VarOut v2 = variational(e_syn, "var2", training, rng);
        z_sem = v1.z;
        z_syn = v2.z;
        l_kl = ad::add(v1.l_kl, v2.l_kl);
    } else {
        out.pooled_syn_pass = ps;
        Tensor e_syn = ad::slice(ps, 1, cfg_.d_sem(), cfg_.d_syn());
        z_sem = e_sem;
        z_syn = affine(e_syn, "synproj");
    }
    out.l_y = decode_teacher_forced(z_sem, z_syn, b.y, training, rng);
    out.l_cstr = l_cstr;
    out.l_kl = l_kl;
    out.l_total = ad::add(ad::add(out.l_y, l_cstr), ad::scale(l_kl, beta));
    return out;
}

// ---------------------------------------------------------------------------
// Inference

LatentPair SeparatorModel::encode_latents(const std::vector<int>& ids) {
    ad::no_grad ng;
    Encoded e = encode({ids});
    Tensor p = pool(e);
    Tensor e_sem = ad::slice(p, 1, 0, cfg_.d_sem());
    Tensor e_syn = ad::slice(p, 1, cfg_.d_sem(), cfg_.d_syn());
    LatentPair lp;
    if (cfg_.mode == "separator") {
        VarOut v = variational(e_sem, "var", false, nullptr);
        lp.mu = v.mu.values();
        lp.sigma = v.sigma.values();
        lp.z_sem = v.mu.values();
        Tensor sub = affine(e_syn, "synproj");
        auto qr = quant_.quantize(sub);
        lp.z_syn = qr.z_syn.values();
        lp.codes = qr.assignment.codes[0];
    } else if (cfg_.mode == "vae_baseline") {
        VarOut v1 = variational(e_sem, "var", false, nullptr);
        VarOut v2 = variational(e_syn, "var2", false, nullptr);
        lp.mu = v1.mu.values();
        lp.sigma = v1.sigma.values();
        lp.z_sem = v1.mu.values();
        lp.z_syn = v2.mu.values();
    } else {
        lp.z_sem = e_sem.values();
        lp.z_syn = affine(e_syn, "synproj").values();
    }
    lp.z = lp.z_sem;
    lp.z.insert(lp.z.end(), lp.z_syn.begin(), lp.z_syn.end());
    return lp;
}

namespace {

// log-softmax of one row, computed in place on plain values.
void log_softmax_row(std::vector<double>& row) {
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    const double lz = mx + std::log(z);
    for (double& v : row) v -= lz;
}

}  // namespace

GenResult SeparatorModel::generate_beam(const std::vector<double>& z_sem,
                                        const std::vector<double>& z_syn,
                                        size_t width, size_t max_len) {
    if (width == 0) throw std::invalid_argument("generate_beam: width must be positive");
    if (max_len == 0) throw std::invalid_argument("generate_beam: max_len must be positive");
    if (z_sem.size() != cfg_.d_sem() || z_syn.size() != cfg_.d_zsyn())
        throw std::invalid_argument("generate_beam: latent dimension mismatch");
    ad::no_grad ng;
    Tensor zs = Tensor::from_values({1, cfg_.d_sem()}, z_sem);
    Tensor zy = Tensor::from_values({1, cfg_.d_zsyn()}, z_syn);
    const std::vector<double> mem1 = build_memory(zs, zy).values();  // [1,2,D]

    struct Hyp {
        std::vector<int> ids;  // generated tokens, no BOS
        double logp = 0.0;
    };
    struct Done {
        std::vector<int> ids;
        double logp = 0.0;
        size_t len = 0;  // generated tokens including EOS
    };
    std::vector<Hyp> live{{{}, 0.0}};
    std::vector<Done> completed;

    for (size_t step = 0; step < max_len && !live.empty(); ++step) {
        const size_t n = live.size();
        const size_t T = step + 1;  // BOS + generated prefix
        std::vector<int> flat(n * T);
        for (size_t i = 0; i < n; ++i) {
            flat[i * T] = Vocab::BOS;
            for (size_t t = 0; t < live[i].ids.size(); ++t)
                flat[i * T + t + 1] = live[i].ids[t];
        }
        std::vector<double> mem(n * mem1.size());
        for (size_t i = 0; i < n; ++i)
            std::copy(mem1.begin(), mem1.end(), mem.begin() + i * mem1.size());
        Tensor memory = Tensor::from_values({n, 2, cfg_.d_model}, std::move(mem));
        Tensor x = decoder_stack(flat, n, T, memory);
        Tensor last = ad::slice(x, 1, T - 1, 1);  // [n, 1, D]
        Tensor logits = affine(ad::reshape(last, {n, cfg_.d_model}), "out");

        struct Cand {
            double logp;
            size_t hyp;
            int tok;
        };
        std::vector<Cand> cands;
        cands.reserve(n * vocab_size_);
        for (size_t i = 0; i < n; ++i) {
            std::vector<double> row(logits.values().begin() + i * vocab_size_,
                                    logits.values().begin() + (i + 1) * vocab_size_);
            log_softmax_row(row);
            for (size_t v = 0; v < vocab_size_; ++v) {
                const int tok = static_cast<int>(v);
                if (tok == Vocab::PAD || tok == Vocab::BOS) continue;
                cands.push_back({live[i].logp + row[v], i, tok});
            }
        }
        const size_t keep = std::min(width, cands.size());
        std::partial_sort(cands.begin(), cands.begin() + keep, cands.end(),
                          [](const Cand& a, const Cand& b) {
                              if (a.logp != b.logp) return a.logp > b.logp;
                              if (a.hyp != b.hyp) return a.hyp < b.hyp;
                              return a.tok < b.tok;
                          });
        std::vector<Hyp> next;
        for (size_t c = 0; c < keep; ++c) {
            const Cand& cd = cands[c];
            if (cd.tok == Vocab::EOS) {
                completed.push_back({live[cd.hyp].ids, cd.logp,
                                     live[cd.hyp].ids.size() + 1});
            } else {
                Hyp h = live[cd.hyp];
                h.ids.push_back(cd.tok);
                h.logp = cd.logp;
                next.push_back(std::move(h));
            }
        }
        live = std::move(next);
    }

    GenResult res;
    auto norm = [](double logp, size_t len) {
        return logp / static_cast<double>(std::max<size_t>(len, 1));
    };
    if (!completed.empty()) {
        size_t best = 0;
        for (size_t i = 1; i < completed.size(); ++i)
            if (norm(completed[i].logp, completed[i].len) >
                norm(completed[best].logp, completed[best].len))
                best = i;
        res.ids = completed[best].ids;
        res.score = norm(completed[best].logp, completed[best].len);
        res.completed = true;
    } else {
        size_t best = 0;
        for (size_t i = 1; i < live.size(); ++i)
            if (norm(live[i].logp, live[i].ids.size()) >
                norm(live[best].logp, live[best].ids.size()))
                best = i;
        res.ids = live[best].ids;
        res.score = norm(live[best].logp, live[best].ids.size());
        res.completed = false;
    }
    return res;
}

std::vector<double> SeparatorModel::next_token_logprobs(
    const std::vector<double>& z_sem, const std::vector<double>& z_syn,
    const std::vector<int>& prefix) {
    ad::no_grad ng;
    Tensor zs = Tensor::from_values({1, cfg_.d_sem()}, z_sem);
    Tensor zy = Tensor::from_values({1, cfg_.d_zsyn()}, z_syn);
    const size_t T = prefix.size() + 1;
    std::vector<int> flat(T);
    flat[0] = Vocab::BOS;
    for (size_t t = 0; t < prefix.size(); ++t) flat[t + 1] = prefix[t];
    Tensor x = decoder_stack(flat, 1, T, build_memory(zs, zy));
    Tensor last = ad::slice(x, 1, T - 1, 1);
    Tensor logits = affine(ad::reshape(last, {1, cfg_.d_model}), "out");
    std::vector<double> row = logits.values();
    log_softmax_row(row);
    return row;
}

double SeparatorModel::score_sequence(const std::vector<double>& z_sem,
                                      const std::vector<double>& z_syn,
                                      const std::vector<int>& ids) {
    ad::no_grad ng;
    Tensor zs = Tensor::from_values({1, cfg_.d_sem()}, z_sem);
    Tensor zy = Tensor::from_values({1, cfg_.d_zsyn()}, z_syn);
    const size_t T = ids.size() + 1;
    std::vector<int> flat(T);
    flat[0] = Vocab::BOS;
    for (size_t t = 0; t < ids.size(); ++t) flat[t + 1] = ids[t];
    Tensor x = decoder_stack(flat, 1, T, build_memory(zs, zy));
    Tensor logits = affine(ad::reshape(x, {T, cfg_.d_model}), "out");
    double total = 0.0;
    for (size_t t = 0; t < T; ++t) {
        std::vector<double> row(logits.values().begin() + t * vocab_size_,
                                logits.values().begin() + (t + 1) * vocab_size_);
        log_softmax_row(row);
        const int target = t + 1 < T ? ids[t] : Vocab::EOS;
        total += row[static_cast<size_t>(target)];
    }
    return total / static_cast<double>(T);
}

// ---------------------------------------------------------------------------
// Serialization

void SeparatorModel::save(Checkpoint& ck) const {
    for (const auto& [name, t] : params_.items()) ck.put_tensor(name, t);
    if (cfg_.mode == "separator") quant_.save(ck, "quantizer");
    ck.meta["model_config"] = cfg_.to_json();
    ck.meta["vocab_size"] = vocab_size_;
}

void SeparatorModel::load(const Checkpoint& ck) {
    if (ck.meta.contains("vocab_size") &&
        ck.meta.at("vocab_size").get<size_t>() != vocab_size_)
        throw std::runtime_error("checkpoint vocab size does not match model");
    if (ck.meta.contains("model_config") &&
        ck.meta.at("model_config") != cfg_.to_json())
        throw std::runtime_error("checkpoint model config does not match model");
    for (auto& [name, t] : params_.items()) ck.load_into(name, t);
    if (cfg_.mode == "separator") quant_.load(ck, "quantizer");
}

}  // namespace separator
