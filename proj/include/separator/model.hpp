#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "separator/checkpoint.hpp"
#include "separator/optim.hpp"
#include "separator/quantizer.hpp"
#include "separator/rng.hpp"
#include "separator/tensor.hpp"

namespace separator {

// Architecture and bottleneck configuration. Serialized as JSON alongside
// checkpoints; validate() reports every problem at once.
struct ModelConfig {
    size_t d_model = 64;
    size_t heads = 4;          // transformer heads, split h_sem + h_syn
    size_t enc_layers = 2;
    size_t dec_layers = 2;
    size_t ff_dim = 128;
    size_t h_sem = 3;
    size_t h_syn = 1;
    size_t quant_heads = 2;    // quantizer heads over the re-projected syn vector
    size_t codebook_size = 16;
    size_t d_code = 16;
    double lambda = 0.25;      // commitment weight
    double ema_gamma = 0.99;
    double ema_eps = 1e-5;
    double token_dropout = 0.2;
    size_t beam_width = 4;
    size_t max_len = 32;
    double kl_warmup_frac = 0.1;  // beta ramps 0 to 1 over this fraction of steps
    double tau_start = 2.0;       // soft-EM temperature anneal for the EMA update
    double tau_end = 0.5;
    double tau_frac = 0.25;       // fraction of steps annealed; hard afterwards
    std::string mode = "separator";  // separator | vae_baseline | ae_baseline

    size_t d_head() const { return d_model / heads; }
    size_t d_sem() const { return h_sem * d_head(); }   // dim of e_sem and z_sem
    size_t d_syn() const { return h_syn * d_head(); }   // dim of pooled e_syn
    size_t d_zsyn() const { return quant_heads * d_code; }

    std::vector<std::string> validate() const;
    nlohmann::json to_json() const;
    // Accepts partial JSON over defaults; throws validation_error listing
    // every unknown key, type error and constraint violation.
    static ModelConfig from_json(const nlohmann::json& j);

    QuantizerConfig quantizer_config() const;
};

// Evaluation-time encodings of one question.
struct LatentPair {
    std::vector<double> z_sem, z_syn, z;  // z = concat(z_sem, z_syn)
    std::vector<int> codes;               // per quantizer head; empty for baselines
    std::vector<double> mu, sigma;
};

struct GenResult {
    std::vector<int> ids;    // generated tokens, no BOS/EOS
    double score = 0.0;      // length-normalized log-probability
    bool completed = false;  // reached EOS within max_len
};

class SeparatorModel {
  public:
    SeparatorModel(ModelConfig cfg, size_t vocab_size, uint64_t seed);

    struct Batch {
        std::vector<std::vector<int>> x_sem;  // token ids, no specials
        std::vector<std::vector<int>> x_syn;
        std::vector<std::vector<int>> y;
    };

    struct Forward {
        ad::Tensor l_y, l_cstr, l_kl, l_total;
        std::vector<std::vector<int>> codes;  // [B][quant_heads], separator mode
        std::vector<double> syn_sub;          // quantizer inputs, for the EMA update
        size_t batch = 0;
        // Debug handles for wiring tests: full pooled vectors of each pass.
        ad::Tensor pooled_sem_pass, pooled_syn_pass;
    };
    // training=true samples z_sem and applies token dropout (needs rng);
    // training=false uses posterior means and no dropout.
    Forward forward(const Batch& b, bool training, double beta, Rng* rng);

    struct Encoded {
        ad::Tensor h;                // [B, T, D]
        std::vector<uint8_t> mask;   // B*T bytes, 1 = real token
        size_t batch = 0, T = 0;
    };
    Encoded encode(const std::vector<std::vector<int>>& ids);
    ad::Tensor pool(const Encoded& enc);  // [B, D], heads concatenated

    // (z, l_kl, mu, sigma); prefix selects the parameter group ("var"/"var2").
    struct VarOut {
        ad::Tensor z, l_kl, mu, sigma;
    };
    VarOut variational(const ad::Tensor& e, const std::string& prefix, bool training,
                       Rng* rng);

    ad::Tensor decode_teacher_forced(const ad::Tensor& z_sem, const ad::Tensor& z_syn,
                                     const std::vector<std::vector<int>>& y,
                                     bool training, Rng* rng);

    LatentPair encode_latents(const std::vector<int>& ids);
    GenResult generate_beam(const std::vector<double>& z_sem,
                            const std::vector<double>& z_syn, size_t width,
                            size_t max_len);
    // Length-normalized log-probability of a given completion (BOS/EOS added).
    double score_sequence(const std::vector<double>& z_sem,
                          const std::vector<double>& z_syn,
                          const std::vector<int>& ids);
    // Log-probabilities of the next token after `prefix` (BOS prepended).
    std::vector<double> next_token_logprobs(const std::vector<double>& z_sem,
                                            const std::vector<double>& z_syn,
                                            const std::vector<int>& prefix);

    void save(Checkpoint& ck) const;
    void load(const Checkpoint& ck);

    const ModelConfig& config() const { return cfg_; }
    size_t vocab_size() const { return vocab_size_; }
    ParamStore& params() { return params_; }
    Quantizer& quantizer() { return quant_; }
    const Quantizer& quantizer() const { return quant_; }
    size_t truncations() const { return truncations_; }

  private:
    ad::Tensor param(const std::string& name) const;
    ad::Tensor affine(const ad::Tensor& x, const std::string& prefix) const;
    ad::Tensor embed(const std::vector<int>& flat_ids, size_t B, size_t T) const;
    ad::Tensor attention(const ad::Tensor& q_in, const ad::Tensor& kv_in,
                         const std::string& prefix,
                         const std::vector<uint8_t>& mask) const;
    ad::Tensor encoder_layer(const ad::Tensor& x, size_t layer,
                             const std::vector<uint8_t>& self_mask) const;
    ad::Tensor decoder_stack(const std::vector<int>& flat_ids, size_t B, size_t T,
                             const ad::Tensor& memory) const;
    ad::Tensor build_memory(const ad::Tensor& z_sem, const ad::Tensor& z_syn) const;
    ad::Tensor layer_norm_named(const ad::Tensor& x, const std::string& prefix) const;

    ModelConfig cfg_;
    size_t vocab_size_ = 0;
    ParamStore params_;
    Quantizer quant_;
    size_t truncations_ = 0;
};

}  // namespace separator
