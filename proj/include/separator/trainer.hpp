#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "separator/checkpoint.hpp"
#include "separator/corpus.hpp"
#include "separator/model.hpp"
#include "separator/optim.hpp"
#include "separator/rng.hpp"
#include "separator/textproc.hpp"

namespace separator {

struct TrainConfig {
    size_t steps = 2000;
    size_t batch_size = 32;
    double lr = 0.005;
    double p_td = 0.3;        // template-dropout probability for triples
    uint64_t seed = 1;        // master seed; all streams derive from it
    size_t log_every = 1;     // csv row cadence
    size_t reseed_every = 50; // dead-code window in steps; 0 disables
    double min_usage = 1.0;

    std::vector<std::string> validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

struct LossRow {
    size_t step;
    double l_y, l_cstr, l_kl, beta, l_total;
};

// Owns the optimization loop for one model: epoch-wise triple regeneration,
// KL-weight and soft-EM temperature schedules, EMA codebook maintenance,
// dead-code reseeding, loss logging, and resumable checkpoints. All
// randomness derives from TrainConfig::seed, so two runs with equal inputs
// produce identical losses and identical checkpoint bytes.
class Trainer {
  public:
    Trainer(SeparatorModel& model, const std::vector<ParaphraseCluster>& train_clusters,
            const Vocab& vocab, const TextProc& tp, TrainConfig tc);

    // Advances up to n steps (bounded by the configured total). Writes one
    // csv row per log_every steps when csv is non-null.
    void run(size_t n, std::ostream* csv = nullptr);
    bool done() const { return step_ >= tc_.steps; }
    size_t step() const { return step_; }

    double beta_at(size_t s) const;  // KL weight for step index s
    double tau_at(size_t s) const;   // soft-EM temperature; <= 0 means hard

    const std::vector<LossRow>& history() const { return history_; }
    static void write_csv_header(std::ostream& os);
    static void write_csv_row(std::ostream& os, const LossRow& r);

    void save(Checkpoint& ck) const;
    void load(const Checkpoint& ck);

    const TrainConfig& config() const { return tc_; }
    const Adam& optimizer() const { return adam_; }

  private:
    SeparatorModel::Batch next_batch();
    void load_epoch();
    void remember_recent(const std::vector<double>& flat, size_t rows);

    SeparatorModel& model_;
    const std::vector<ParaphraseCluster>& clusters_;
    const Vocab& vocab_;
    const TextProc& tp_;
    TrainConfig tc_;
    Adam adam_;
    Rng train_rng_;   // sampling + token dropout + codebook init
    Rng reseed_rng_;
    ExemplarIndex index_;
    ChunkBank bank_;

    std::vector<TrainingTriple> triples_;
    bool epoch_loaded_ = false;
    size_t epoch_ = 0, pos_ = 0;

    std::vector<double> recent_;  // ring buffer of recent quantizer inputs
    size_t recent_rows_ = 0, recent_next_ = 0;
    static constexpr size_t kRecentCap = 256;

    std::vector<LossRow> history_;
    size_t step_ = 0;
};

}  // namespace separator
