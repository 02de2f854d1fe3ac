#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "separator/codepredict.hpp"
#include "separator/corpus.hpp"
#include "separator/model.hpp"
#include "separator/textproc.hpp"
#include "separator/trainer.hpp"

namespace separator {

// Full description of one run: corpus, split, seeds, and the per-stage
// configs. Serialized as config.json next to every artifact; the FNV-1a
// hash of the canonical dump identifies the run in all outputs.
struct RunConfig {
    int schema_version = 1;          // frozen; rejects future formats
    std::string stage = "model";     // "model" trains the seq2seq,
                                     // "predictor" fits codes on a frozen base run
    std::string corpus;              // cluster JSONL path
    std::array<double, 3> split_weights{0.8, 0.1, 0.1};
    uint64_t split_seed = 13;
    std::string out_dir;
    uint64_t seed_data = 1;          // training stream (sampling, dropout, reseed)
    uint64_t seed_model = 2;         // parameter initialization
    uint64_t seed_eval = 3;          // dev metrics / analysis sampling
    double p_td = 0.3;               // template-dropout probability
    ModelConfig model;
    TrainConfig train;               // seed and p_td always come from the fields above
    PredictorConfig predictor;
    std::string base_checkpoint;     // stage=predictor: directory of the frozen run
    nlohmann::json meta = nlohmann::json::object();

    std::vector<std::string> validate() const;
    nlohmann::json to_json() const;  // canonical; excludes train.seed/p_td
    // Accepts partial JSON over defaults; lists every problem at once.
    // A "config_hash" key is tolerated and ignored.
    static RunConfig from_json(const nlohmann::json& j);
    // Parses the file; when it carries a config_hash, verifies it.
    static RunConfig from_file(const std::string& path);
    std::string config_hash() const;

    TrainConfig train_effective() const;          // train with seed/p_td filled in
    PredictorConfig predictor_effective() const;  // predictor with seed filled in
};

// On-disk layout of a model run directory:
//   config.json  model.ckpt  vocab.txt  stopwords.txt  lexicon.txt
// plus loss.csv / dev_metrics.json written by the train command.
struct ModelBundle {
    RunConfig run;
    TextProc tp = TextProc::builtin();
    Vocab vocab;
    std::unique_ptr<SeparatorModel> model;
    Checkpoint ckpt;  // raw checkpoint, kept so a trainer can resume from it
};

// Passing a trainer persists its full optimization state; null saves the
// bare model.
void save_model_bundle(const std::string& dir, const RunConfig& rc, const TextProc& tp,
                       const Vocab& vocab, const SeparatorModel& model,
                       const Trainer* trainer);
ModelBundle load_model_bundle(const std::string& dir);

// Predictor run directory: config.json + predictor.ckpt.
struct PredictorBundle {
    RunConfig run;
    std::unique_ptr<CodePredictor> pred;
};
void save_predictor_bundle(const std::string& dir, const RunConfig& rc,
                           const CodePredictor& pred);
PredictorBundle load_predictor_bundle(const std::string& dir);

nlohmann::json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const nlohmann::json& j);

}  // namespace separator
