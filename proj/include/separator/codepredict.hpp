#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "separator/checkpoint.hpp"
#include "separator/corpus.hpp"
#include "separator/model.hpp"
#include "separator/optim.hpp"
#include "separator/rng.hpp"

namespace separator {

// Test-time replacement for oracle exemplars: a small MLP that maps a
// question's (z_sem, z_syn) to a distribution over each quantizer head's
// codes, trained on the code tuples licensed by cluster-mates.

struct PredictorConfig {
    size_t hidden = 256;     // width of both hidden layers
    size_t steps = 2000;
    size_t batch_size = 32;
    double lr = 0.001;
    uint64_t seed = 1;

    std::vector<std::string> validate() const;
    nlohmann::json to_json() const;
    static PredictorConfig from_json(const nlohmann::json& j);
};

// Per-question licensed code sets, derived from a frozen separator
// checkpoint (identified by model_hash). Singleton clusters contribute
// nothing: they license no codes.
struct LicensedCodes {
    struct Entry {
        std::vector<int> x;                    // token ids of the question
        std::vector<std::vector<int>> tuples;  // cluster-mates' code tuples
        size_t cluster = 0;
    };
    std::vector<Entry> entries;
    std::string model_hash;
};

// Deterministic content hash of a checkpoint's tensors (names, shapes,
// data bytes); used to pin a predictor to the separator it was trained on.
std::string checkpoint_hash(const Checkpoint& ck);
std::string model_content_hash(const SeparatorModel& model);

LicensedCodes build_licensed_codes(const std::vector<ParaphraseCluster>& clusters,
                                   const Vocab& vocab, SeparatorModel& model);

// Flattened [heads*K] target: per head, uniform over the distinct code
// values licensed for that head.
std::vector<double> licensed_target(const std::vector<std::vector<int>>& tuples,
                                    size_t heads, size_t K);

// Inputs and per-head target distributions ready for training; decoupled
// from the model so synthetic tasks can be constructed directly.
struct PredictorDataset {
    size_t in_dim = 0, heads = 0, K = 0;
    std::vector<std::vector<double>> inputs;   // [N][in_dim]
    std::vector<std::vector<double>> targets;  // [N][heads*K]
};

PredictorDataset make_predictor_dataset(const LicensedCodes& lc, SeparatorModel& model);

class CodePredictor {
  public:
    CodePredictor(size_t in_dim, size_t heads, size_t K, size_t hidden, uint64_t seed);

    // [B, heads*K] logits from a [B, in_dim] input.
    ad::Tensor forward(const ad::Tensor& z);

    // Softmax per head for one input row; each inner vector sums to 1.
    std::vector<std::vector<double>> probabilities(const std::vector<double>& z);
    // Per-head argmax; ties resolve to the lowest code index.
    std::vector<int> predict(const std::vector<double>& z);

    ParamStore& params() { return params_; }
    size_t in_dim() const { return in_dim_; }
    size_t heads() const { return heads_; }
    size_t K() const { return K_; }
    size_t hidden() const { return hidden_; }
    const std::string& model_hash() const { return model_hash_; }
    void set_model_hash(std::string h) { model_hash_ = std::move(h); }

    void save(Checkpoint& ck) const;
    static CodePredictor load(const Checkpoint& ck);

  private:
    size_t in_dim_, heads_, K_, hidden_;
    std::string model_hash_;
    ParamStore params_;
};

// Adam-trains a fresh predictor on the dataset; deterministic given
// cfg.seed. Appends one batch-loss value per step to *losses when given.
CodePredictor train_predictor(const PredictorDataset& ds, const PredictorConfig& cfg,
                              std::vector<double>* losses = nullptr);
CodePredictor train_predictor(const LicensedCodes& lc, SeparatorModel& model,
                              const PredictorConfig& cfg,
                              std::vector<double>* losses = nullptr);

// Encodes X with the frozen model, then per-head argmax over the
// predictor's logits.
std::vector<int> predict_codes(const std::vector<int>& x_ids, CodePredictor& pred,
                               SeparatorModel& model);

}  // namespace separator
