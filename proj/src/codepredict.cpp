#include "separator/codepredict.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <stdexcept>

#include "separator/errors.hpp"
#include "separator/hash.hpp"
#include "separator/ops.hpp"

namespace separator {

using ad::Tensor;
using nlohmann::json;

std::vector<std::string> PredictorConfig::validate() const {
    std::vector<std::string> errs;
    if (hidden == 0) errs.push_back("hidden must be positive");
    if (steps == 0) errs.push_back("steps must be positive");
    if (batch_size == 0) errs.push_back("batch_size must be positive");
    if (lr <= 0.0) errs.push_back("lr must be positive");
    return errs;
}

json PredictorConfig::to_json() const {
    return json{{"hidden", hidden},
                {"steps", steps},
                {"batch_size", batch_size},
                {"lr", lr},
                {"seed", seed}};
}

PredictorConfig PredictorConfig::from_json(const json& j) {
    if (!j.is_object()) throw validation_error("predictor config must be a JSON object");
    std::vector<std::string> errs;
    PredictorConfig c;
    static const std::vector<std::string> known = {"hidden", "steps", "batch_size",
                                                   "lr", "seed"};
    for (const auto& item : j.items()) {
        bool ok = false;
        for (const auto& k : known) ok = ok || k == item.key();
        if (!ok) errs.push_back("unknown key: " + item.key());
    }
    auto get_size = [&](const char* key, size_t& dst) {
        if (!j.contains(key)) return;
        const json& v = j.at(key);
        if (v.is_number_unsigned() || (v.is_number_integer() && v.get<int64_t>() >= 0))
            dst = v.get<size_t>();
        else
            errs.push_back(std::string(key) + " must be a non-negative integer");
    };
    get_size("hidden", c.hidden);
    get_size("steps", c.steps);
    get_size("batch_size", c.batch_size);
    if (j.contains("lr")) {
        if (j.at("lr").is_number())
            c.lr = j.at("lr").get<double>();
        else
            errs.push_back("lr must be a number");
    }
    if (j.contains("seed")) {
        if (j.at("seed").is_number_unsigned() || j.at("seed").is_number_integer())
            c.seed = j.at("seed").get<uint64_t>();
        else
            errs.push_back("seed must be an integer");
    }
    for (const auto& e : c.validate()) errs.push_back(e);
    if (!errs.empty()) {
        std::string msg = "invalid predictor config: ";
        for (size_t i = 0; i < errs.size(); ++i) {
            if (i) msg += "; ";
            msg += errs[i];
        }
        throw validation_error(msg);
    }
    return c;
}

std::string checkpoint_hash(const Checkpoint& ck) {
    Fnv1a f;
    for (const auto& [name, e] : ck.entries()) {
        f.update(name);
        for (size_t d : e.shape) f.update(&d, sizeof d);
        f.update(e.data.data(), e.data.size() * sizeof(double));
    }
    return f.hex();
}

std::string model_content_hash(const SeparatorModel& model) {
    Checkpoint ck;
    model.save(ck);
    return checkpoint_hash(ck);
}

LicensedCodes build_licensed_codes(const std::vector<ParaphraseCluster>& clusters,
                                   const Vocab& vocab, SeparatorModel& model) {
    LicensedCodes lc;
    lc.model_hash = model_content_hash(model);
    for (size_t c = 0; c < clusters.size(); ++c) {
        const auto& qs = clusters[c].questions;
        if (qs.size() < 2) continue;  // singletons license nothing
        std::vector<std::vector<int>> ids, codes;
        for (const auto& q : qs) {
            ids.push_back(vocab.encode(q));
            codes.push_back(model.encode_latents(ids.back()).codes);
        }
        for (size_t i = 0; i < qs.size(); ++i) {
            LicensedCodes::Entry e;
            e.x = ids[i];
            e.cluster = c;
            for (size_t j = 0; j < qs.size(); ++j)
                if (j != i) e.tuples.push_back(codes[j]);
            lc.entries.push_back(std::move(e));
        }
    }
    return lc;
}

std::vector<double> licensed_target(const std::vector<std::vector<int>>& tuples,
                                    size_t heads, size_t K) {
    if (tuples.empty())
        throw std::invalid_argument("licensed_target: empty tuple set");
    std::vector<double> t(heads * K, 0.0);
    for (size_t h = 0; h < heads; ++h) {
        std::set<int> values;
        for (const auto& tup : tuples) {
            if (tup.size() != heads)
                throw std::invalid_argument("licensed_target: tuple arity mismatch");
            if (tup[h] < 0 || static_cast<size_t>(tup[h]) >= K)
                throw std::invalid_argument("licensed_target: code out of range");
            values.insert(tup[h]);
        }
        const double p = 1.0 / static_cast<double>(values.size());
        for (int v : values) t[h * K + v] = p;
    }
    return t;
}

PredictorDataset make_predictor_dataset(const LicensedCodes& lc, SeparatorModel& model) {
    PredictorDataset ds;
    const ModelConfig& mc = model.config();
    ds.heads = mc.quant_heads;
    ds.K = mc.codebook_size;
    ds.in_dim = mc.d_sem() + mc.d_zsyn();
    for (const auto& e : lc.entries) {
        LatentPair lp = model.encode_latents(e.x);
        std::vector<double> in = lp.z_sem;
        in.insert(in.end(), lp.z_syn.begin(), lp.z_syn.end());
        if (in.size() != ds.in_dim)
            throw std::runtime_error("predictor dataset: latent dim mismatch");
        ds.inputs.push_back(std::move(in));
        ds.targets.push_back(licensed_target(e.tuples, ds.heads, ds.K));
    }
    return ds;
}

CodePredictor::CodePredictor(size_t in_dim, size_t heads, size_t K, size_t hidden,
                             uint64_t seed)
    : in_dim_(in_dim), heads_(heads), K_(K), hidden_(hidden) {
    if (in_dim == 0 || heads == 0 || K == 0 || hidden == 0)
        throw std::invalid_argument("CodePredictor: all dimensions must be positive");
    Rng rng(seed);
    auto xavier = [&](const std::string& name, size_t rows, size_t cols) {
        const double lim = std::sqrt(6.0 / static_cast<double>(rows + cols));
        std::vector<double> v(rows * cols);
        for (double& x : v) x = (rng.uniform() * 2.0 - 1.0) * lim;
        params_.add(name, Tensor::from_values({rows, cols}, std::move(v), true));
    };
    auto zeros = [&](const std::string& name, size_t n) {
        params_.add(name, Tensor::zeros({n}, true));
    };
    xavier("l0.w", in_dim_, hidden_);
    zeros("l0.b", hidden_);
    xavier("l1.w", hidden_, hidden_);
    zeros("l1.b", hidden_);
    xavier("out.w", hidden_, heads_ * K_);
    zeros("out.b", heads_ * K_);
}

Tensor CodePredictor::forward(const Tensor& z) {
    if (z.rank() != 2 || z.shape()[1] != in_dim_)
        throw ad::shape_error("CodePredictor::forward: expected [B, " +
                              std::to_string(in_dim_) + "] input");
    Tensor h = relu(add(matmul(z, *params_.find("l0.w")), *params_.find("l0.b")));
    h = relu(add(matmul(h, *params_.find("l1.w")), *params_.find("l1.b")));
    return add(matmul(h, *params_.find("out.w")), *params_.find("out.b"));
}

std::vector<std::vector<double>> CodePredictor::probabilities(
    const std::vector<double>& z) {
    ad::no_grad guard;
    Tensor logits = forward(Tensor::from_values({1, in_dim_}, z));
    std::vector<std::vector<double>> out;
    for (size_t h = 0; h < heads_; ++h) {
        Tensor p = softmax_last(slice(logits, 1, h * K_, K_));
        out.push_back(p.values());
    }
    return out;
}

std::vector<int> CodePredictor::predict(const std::vector<double>& z) {
    ad::no_grad guard;
    Tensor logits = forward(Tensor::from_values({1, in_dim_}, z));
    const std::vector<double>& L = logits.values();
    std::vector<int> codes(heads_);
    for (size_t h = 0; h < heads_; ++h) {
        size_t best = 0;
        for (size_t k = 1; k < K_; ++k)
            if (L[h * K_ + k] > L[h * K_ + best]) best = k;  // ties keep lowest
        codes[h] = static_cast<int>(best);
    }
    return codes;
}

void CodePredictor::save(Checkpoint& ck) const {
    for (const auto& [name, t] : params_.items()) ck.put_tensor("pred." + name, t);
    ck.meta["predictor"] = json{{"in_dim", in_dim_},
                                {"heads", heads_},
                                {"K", K_},
                                {"hidden", hidden_},
                                {"model_hash", model_hash_}};
}

CodePredictor CodePredictor::load(const Checkpoint& ck) {
    if (!ck.meta.contains("predictor"))
        throw std::runtime_error("checkpoint has no predictor state");
    const json& m = ck.meta.at("predictor");
    CodePredictor p(m.at("in_dim").get<size_t>(), m.at("heads").get<size_t>(),
                    m.at("K").get<size_t>(), m.at("hidden").get<size_t>(), 0);
    p.model_hash_ = m.value("model_hash", "");
    for (auto& [name, t] : p.params_.items()) ck.load_into("pred." + name, t);
    return p;
}

CodePredictor train_predictor(const PredictorDataset& ds, const PredictorConfig& cfg,
                              std::vector<double>* losses) {
    {
        const auto errs = cfg.validate();
        if (!errs.empty()) {
            std::string msg = "invalid predictor config: ";
            for (size_t i = 0; i < errs.size(); ++i) {
                if (i) msg += "; ";
                msg += errs[i];
            }
            throw validation_error(msg);
        }
    }
    if (ds.inputs.empty())
        throw validation_error("predictor training set is empty");
    if (ds.inputs.size() != ds.targets.size())
        throw std::invalid_argument("predictor dataset: inputs/targets size mismatch");

    CodePredictor pred(ds.in_dim, ds.heads, ds.K, cfg.hidden, derive_seed(cfg.seed, 0));
    Adam adam(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
    Rng rng(derive_seed(cfg.seed, 1));
    const size_t N = ds.inputs.size();

    for (size_t s = 0; s < cfg.steps; ++s) {
        const size_t B = std::min(cfg.batch_size, N);
        std::vector<double> in(B * ds.in_dim), tgt(B * ds.heads * ds.K);
        for (size_t b = 0; b < B; ++b) {
            const size_t i = static_cast<size_t>(rng.below(N));
            std::copy(ds.inputs[i].begin(), ds.inputs[i].end(), in.begin() + b * ds.in_dim);
            std::copy(ds.targets[i].begin(), ds.targets[i].end(),
                      tgt.begin() + b * ds.heads * ds.K);
        }
        Tensor z = Tensor::from_values({B, ds.in_dim}, std::move(in));
        Tensor logits = pred.forward(z);
        Tensor loss;
        for (size_t h = 0; h < ds.heads; ++h) {
            std::vector<double> ht(B * ds.K);
            for (size_t b = 0; b < B; ++b)
                std::copy(tgt.begin() + (b * ds.heads + h) * ds.K,
                          tgt.begin() + (b * ds.heads + h + 1) * ds.K,
                          ht.begin() + b * ds.K);
            Tensor ce = cross_entropy_logits_dist(slice(logits, 1, h * ds.K, ds.K), ht);
            loss = loss.defined() ? add(loss, ce) : ce;
        }
        const double lv = loss.item();
        if (!std::isfinite(lv)) {
            char buf[128];
            std::snprintf(buf, sizeof buf,
                          "predictor training aborted: non-finite loss at step %zu",
                          s + 1);
            throw std::runtime_error(buf);
        }
        pred.params().zero_grads();
        ad::backward(loss);
        adam.step(pred.params(), cfg.lr);
        if (losses) losses->push_back(lv);
    }
    return pred;
}

CodePredictor train_predictor(const LicensedCodes& lc, SeparatorModel& model,
                              const PredictorConfig& cfg, std::vector<double>* losses) {
    CodePredictor pred = train_predictor(make_predictor_dataset(lc, model), cfg, losses);
    pred.set_model_hash(lc.model_hash);
    return pred;
}

std::vector<int> predict_codes(const std::vector<int>& x_ids, CodePredictor& pred,
                               SeparatorModel& model) {
    LatentPair lp = model.encode_latents(x_ids);
    std::vector<double> z = lp.z_sem;
    z.insert(z.end(), lp.z_syn.begin(), lp.z_syn.end());
    return pred.predict(z);
}

}  // namespace separator
