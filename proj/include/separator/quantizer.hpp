#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "separator/checkpoint.hpp"
#include "separator/ops.hpp"
#include "separator/rng.hpp"
#include "separator/tensor.hpp"

namespace separator {

struct QuantizerConfig {
    size_t heads = 2;     // quantizer heads (H̃_syn)
    size_t K = 16;        // codes per head
    size_t d_code = 16;   // embedding width per head
    double lambda = 0.25; // commitment weight
    double gamma = 0.99;  // EMA decay
    double eps = 1e-5;    // count floor
};

struct CodeAssignment {
    // hard nearest codes, ties to lowest index: [batch][head]
    std::vector<std::vector<int>> codes;
    // responsibilities per head, one-hot in hard mode: [batch][head][K]
    std::vector<std::vector<std::vector<double>>> resp;
};

// Multi-head EMA vector quantizer. Codebooks are not trainable parameters:
// they move only through ema_update, so they collect no gradients.
class Quantizer {
  public:
    explicit Quantizer(QuantizerConfig cfg);

    struct Result {
        CodeAssignment assignment;
        ad::Tensor z_syn;   // [B, heads*d_code], straight-through to the input
        ad::Tensor l_cstr;  // scalar: lambda * batch-mean of per-head unsquared norms
    };

    // Builds the quantized forward graph for a [B, heads*d_code] input.
    Result quantize(const ad::Tensor& sub);

    // Hard codes plus responsibilities; temperature <= 0 means hard one-hot.
    CodeAssignment assign(const std::vector<double>& flat, size_t batch,
                          double temperature) const;
    std::vector<double> soft_assign(const double* sub_head, size_t head,
                                    double temperature) const;

    void init_from_batch(const std::vector<double>& flat, size_t batch, Rng& rng);
    bool initialized() const { return initialized_; }
    void ema_update(const std::vector<double>& flat, size_t batch,
                    const CodeAssignment& assignment);
    size_t reseed_dead_codes(const std::vector<double>& recent_flat, size_t n_recent,
                             double min_usage, Rng& rng);
    void reset_usage();

    void save(Checkpoint& ck, const std::string& prefix) const;
    void load(const Checkpoint& ck, const std::string& prefix);

    const QuantizerConfig& config() const { return cfg_; }
    const ad::Tensor& embeddings(size_t head) const { return emb_[head]; }
    const std::vector<double>& ema_counts(size_t head) const { return counts_[head]; }
    const std::vector<double>& usage(size_t head) const { return usage_[head]; }
    size_t dim() const { return cfg_.heads * cfg_.d_code; }

    // z_syn for explicit codes (predictor-driven generation), eval only.
    ad::Tensor lookup_codes(const std::vector<std::vector<int>>& codes) const;

    // Direct codebook override; leaves EMA statistics untouched.
    void set_embeddings(size_t head, const std::vector<double>& v);

  private:
    double dist2(size_t head, size_t k, const double* sub) const;

    QuantizerConfig cfg_;
    bool initialized_ = false;
    std::vector<ad::Tensor> emb_;              // per head [K, d_code]
    std::vector<std::vector<double>> counts_;  // per head [K]
    std::vector<std::vector<double>> sums_;    // per head [K*d_code]
    std::vector<std::vector<double>> usage_;   // per head [K], window counters
};

}  // namespace separator
