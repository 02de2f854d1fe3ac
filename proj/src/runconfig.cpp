#include "separator/runconfig.hpp"

#include <filesystem>
#include <fstream>

#include "separator/errors.hpp"
#include "separator/hash.hpp"

namespace separator {

namespace fs = std::filesystem;
using nlohmann::json;

nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw validation_error("cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw validation_error("cannot parse " + path + ": " + e.what());
    }
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw validation_error("cannot write " + path);
    out << j.dump(2) << '\n';
    if (!out) throw validation_error("write failed for " + path);
}

std::vector<std::string> RunConfig::validate() const {
    std::vector<std::string> errs;
    if (schema_version != 1) errs.push_back("schema_version must be 1");
    if (stage != "model" && stage != "predictor")
        errs.push_back("stage must be 'model' or 'predictor'");
    if (corpus.empty()) errs.push_back("corpus path is required");
    if (out_dir.empty()) errs.push_back("out_dir is required");
    bool weights_ok = true;
    for (double w : split_weights) weights_ok = weights_ok && w >= 0.0;
    if (!weights_ok) errs.push_back("split weights must be non-negative");
    if (weights_ok && !(split_weights[0] > 0.0))
        errs.push_back("train split weight must be positive");
    if (!(p_td >= 0.0 && p_td <= 1.0)) errs.push_back("p_td must be in [0, 1]");
    if (stage == "predictor" && base_checkpoint.empty())
        errs.push_back("stage 'predictor' requires base_checkpoint");
    for (const auto& e : model.validate()) errs.push_back("model: " + e);
    for (const auto& e : train_effective().validate()) errs.push_back("train: " + e);
    for (const auto& e : predictor_effective().validate()) errs.push_back("predictor: " + e);
    return errs;
}

TrainConfig RunConfig::train_effective() const {
    TrainConfig t = train;
    t.seed = seed_data;
    t.p_td = p_td;
    return t;
}

PredictorConfig RunConfig::predictor_effective() const {
    PredictorConfig p = predictor;
    p.seed = seed_data;
    return p;
}

json RunConfig::to_json() const {
    json jt = train.to_json();
    jt.erase("seed");  // owned by the top-level seeds/p_td fields
    jt.erase("p_td");
    json jp = predictor.to_json();
    jp.erase("seed");
    return json{{"schema_version", schema_version},
                {"stage", stage},
                {"corpus", corpus},
                {"split", json{{"weights", split_weights}, {"seed", split_seed}}},
                {"out_dir", out_dir},
                {"seeds", json{{"data", seed_data}, {"model", seed_model}, {"eval", seed_eval}}},
                {"p_td", p_td},
                {"model", model.to_json()},
                {"train", jt},
                {"predictor", jp},
                {"base_checkpoint", base_checkpoint},
                {"meta", meta}};
}

std::string RunConfig::config_hash() const { return fnv1a_hex(to_json().dump()); }

RunConfig RunConfig::from_json(const json& j) {
    if (!j.is_object()) throw validation_error("invalid run config: must be a JSON object");
    std::vector<std::string> errs;
    RunConfig c;

    static const std::vector<std::string> known = {
        "schema_version", "stage",  "corpus", "split",     "out_dir",
        "seeds",          "p_td",   "model",  "train",     "predictor",
        "base_checkpoint", "meta",  "config_hash"};
    for (const auto& item : j.items()) {
        bool ok = false;
        for (const auto& k : known) ok = ok || k == item.key();
        if (!ok) errs.push_back("unknown key: " + item.key());
    }

    auto get_str = [&](const char* key, std::string& dst) {
        if (!j.contains(key)) return;
        if (j.at(key).is_string())
            dst = j.at(key).get<std::string>();
        else
            errs.push_back(std::string(key) + " must be a string");
    };
    auto get_u64 = [&](const json& v, const std::string& name, uint64_t& dst) {
        if (v.is_number_unsigned() || (v.is_number_integer() && v.get<int64_t>() >= 0))
            dst = v.get<uint64_t>();
        else
            errs.push_back(name + " must be a non-negative integer");
    };

    if (j.contains("schema_version")) {
        if (j.at("schema_version").is_number_integer())
            c.schema_version = j.at("schema_version").get<int>();
        else
            errs.push_back("schema_version must be an integer");
    }
    get_str("stage", c.stage);
    get_str("corpus", c.corpus);
    get_str("out_dir", c.out_dir);
    get_str("base_checkpoint", c.base_checkpoint);

    if (j.contains("split")) {
        const json& s = j.at("split");
        if (!s.is_object()) {
            errs.push_back("split must be an object");
        } else {
            for (const auto& item : s.items())
                if (item.key() != "weights" && item.key() != "seed")
                    errs.push_back("split: unknown key: " + item.key());
            if (s.contains("weights")) {
                const json& w = s.at("weights");
                bool ok = w.is_array() && w.size() == 3;
                if (ok)
                    for (const auto& v : w) ok = ok && v.is_number();
                if (ok)
                    c.split_weights = w.get<std::array<double, 3>>();
                else
                    errs.push_back("split.weights must be an array of 3 numbers");
            }
            if (s.contains("seed")) get_u64(s.at("seed"), "split.seed", c.split_seed);
        }
    }

    if (j.contains("seeds")) {
        const json& s = j.at("seeds");
        if (!s.is_object()) {
            errs.push_back("seeds must be an object");
        } else {
            for (const auto& item : s.items())
                if (item.key() != "data" && item.key() != "model" && item.key() != "eval")
                    errs.push_back("seeds: unknown key: " + item.key());
            if (s.contains("data")) get_u64(s.at("data"), "seeds.data", c.seed_data);
            if (s.contains("model")) get_u64(s.at("model"), "seeds.model", c.seed_model);
            if (s.contains("eval")) get_u64(s.at("eval"), "seeds.eval", c.seed_eval);
        }
    }

    if (j.contains("p_td")) {
        if (j.at("p_td").is_number())
            c.p_td = j.at("p_td").get<double>();
        else
            errs.push_back("p_td must be a number");
    }
    if (j.contains("meta")) c.meta = j.at("meta");

    if (j.contains("model")) {
        try {
            c.model = ModelConfig::from_json(j.at("model"));
        } catch (const validation_error& e) {
            errs.push_back(e.what());
        }
    }
    if (j.contains("train")) {
        json t = j.at("train");
        if (!t.is_object()) {
            errs.push_back("train must be an object");
        } else {
            if (t.contains("seed")) {
                errs.push_back("train.seed is not configurable; use seeds.data");
                t.erase("seed");
            }
            if (t.contains("p_td")) {
                errs.push_back("train.p_td is not configurable; use the top-level p_td");
                t.erase("p_td");
            }
            try {
                c.train = TrainConfig::from_json(t);
            } catch (const validation_error& e) {
                errs.push_back(e.what());
            }
        }
    }
    if (j.contains("predictor")) {
        json p = j.at("predictor");
        if (!p.is_object()) {
            errs.push_back("predictor must be an object");
        } else {
            if (p.contains("seed")) {
                errs.push_back("predictor.seed is not configurable; use seeds.data");
                p.erase("seed");
            }
            try {
                c.predictor = PredictorConfig::from_json(p);
            } catch (const validation_error& e) {
                errs.push_back(e.what());
            }
        }
    }

    for (const auto& e : c.validate()) errs.push_back(e);
    if (!errs.empty()) {
        std::string msg = "invalid run config: ";
        for (size_t i = 0; i < errs.size(); ++i) {
            if (i) msg += "; ";
            msg += errs[i];
        }
        throw validation_error(msg);
    }
    return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
    json j = read_json_file(path);
    std::string stored;
    if (j.is_object() && j.contains("config_hash") && j.at("config_hash").is_string())
        stored = j.at("config_hash").get<std::string>();
    RunConfig c = from_json(j);
    if (!stored.empty() && stored != c.config_hash())
        throw validation_error("config hash mismatch in " + path + ": stored " + stored +
                               ", computed " + c.config_hash() +
                               " (remove the config_hash field after editing)");
    return c;
}

namespace {

json artifact_meta(const RunConfig& rc) {
    return json{{"schema_version", rc.schema_version},
                {"stage", rc.stage},
                {"config_hash", rc.config_hash()},
                {"seeds", json{{"data", rc.seed_data},
                               {"model", rc.seed_model},
                               {"eval", rc.seed_eval}}}};
}

}  // namespace

void save_model_bundle(const std::string& dir, const RunConfig& rc, const TextProc& tp,
                       const Vocab& vocab, const SeparatorModel& model,
                       const Trainer* trainer) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw validation_error("cannot create directory " + dir + ": " + ec.message());
    Checkpoint ck;
    if (trainer)
        trainer->save(ck);
    else
        model.save(ck);
    ck.meta["artifact"] = artifact_meta(rc);
    ck.save(dir + "/model.ckpt");
    vocab.save(dir + "/vocab.txt");
    tp.save_files(dir + "/stopwords.txt", dir + "/lexicon.txt");
    json j = rc.to_json();
    j["config_hash"] = rc.config_hash();
    write_json_file(dir + "/config.json", j);
}

ModelBundle load_model_bundle(const std::string& dir) {
    if (!fs::exists(fs::path(dir) / "config.json") ||
        !fs::exists(fs::path(dir) / "model.ckpt"))
        throw validation_error("not a model run directory (missing config.json/model.ckpt): " +
                               dir);
    ModelBundle b;
    b.run = RunConfig::from_file(dir + "/config.json");
    b.tp = TextProc::from_files(dir + "/stopwords.txt", dir + "/lexicon.txt");
    b.vocab = Vocab::load(dir + "/vocab.txt");
    b.ckpt = Checkpoint::load(dir + "/model.ckpt");
    b.model = std::make_unique<SeparatorModel>(b.run.model, b.vocab.size(), 0);
    b.model->load(b.ckpt);
    return b;
}

void save_predictor_bundle(const std::string& dir, const RunConfig& rc,
                           const CodePredictor& pred) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw validation_error("cannot create directory " + dir + ": " + ec.message());
    Checkpoint ck;
    pred.save(ck);
    ck.meta["artifact"] = artifact_meta(rc);
    ck.save(dir + "/predictor.ckpt");
    json j = rc.to_json();
    j["config_hash"] = rc.config_hash();
    write_json_file(dir + "/config.json", j);
}

PredictorBundle load_predictor_bundle(const std::string& dir) {
    if (!fs::exists(fs::path(dir) / "config.json") ||
        !fs::exists(fs::path(dir) / "predictor.ckpt"))
        throw validation_error(
            "not a predictor run directory (missing config.json/predictor.ckpt): " + dir);
    PredictorBundle b;
    b.run = RunConfig::from_file(dir + "/config.json");
    Checkpoint ck = Checkpoint::load(dir + "/predictor.ckpt");
    b.pred = std::make_unique<CodePredictor>(CodePredictor::load(ck));
    return b;
}

}  // namespace separator
