#include "separator/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <stdexcept>

#include "separator/errors.hpp"
#include "separator/ops.hpp"

namespace separator {

using nlohmann::json;

std::vector<std::string> TrainConfig::validate() const {
    std::vector<std::string> errs;
    if (steps == 0) errs.push_back("steps must be positive");
    if (batch_size == 0) errs.push_back("batch_size must be positive");
    if (lr <= 0.0) errs.push_back("lr must be positive");
    if (!(p_td >= 0.0 && p_td <= 1.0)) errs.push_back("p_td must be in [0, 1]");
    if (log_every == 0) errs.push_back("log_every must be positive");
    if (min_usage < 0.0) errs.push_back("min_usage must be non-negative");
    return errs;
}

json TrainConfig::to_json() const {
    return json{{"steps", steps},       {"batch_size", batch_size},
                {"lr", lr},             {"p_td", p_td},
                {"seed", seed},         {"log_every", log_every},
                {"reseed_every", reseed_every}, {"min_usage", min_usage}};
}

TrainConfig TrainConfig::from_json(const json& j) {
    std::vector<std::string> errs;
    TrainConfig c;
    if (!j.is_object()) throw validation_error("train config must be a JSON object");
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
        if (j.at(key).is_number())
            dst = j.at(key).get<double>();
        else
            errs.push_back(std::string(key) + " must be a number");
    };
    static const std::vector<std::string> known = {
        "steps", "batch_size", "lr",           "p_td",
        "seed",  "log_every",  "reseed_every", "min_usage"};
    for (const auto& item : j.items()) {
        bool ok = false;
        for (const auto& k : known) ok = ok || k == item.key();
        if (!ok) errs.push_back("unknown key: " + item.key());
    }
    get_size("steps", c.steps);
    get_size("batch_size", c.batch_size);
    get_double("lr", c.lr);
    get_double("p_td", c.p_td);
    if (j.contains("seed")) {
        if (j.at("seed").is_number_unsigned() || j.at("seed").is_number_integer())
            c.seed = j.at("seed").get<uint64_t>();
        else
            errs.push_back("seed must be an integer");
    }
    get_size("log_every", c.log_every);
    get_size("reseed_every", c.reseed_every);
    get_double("min_usage", c.min_usage);
    for (const auto& e : c.validate()) errs.push_back(e);
    if (!errs.empty()) {
        std::string msg = "invalid train config: ";
        for (size_t i = 0; i < errs.size(); ++i) {
            if (i) msg += "; ";
            msg += errs[i];
        }
        throw validation_error(msg);
    }
    return c;
}

Trainer::Trainer(SeparatorModel& model,
                 const std::vector<ParaphraseCluster>& train_clusters,
                 const Vocab& vocab, const TextProc& tp, TrainConfig tc)
    : model_(model),
      clusters_(train_clusters),
      vocab_(vocab),
      tp_(tp),
      tc_(std::move(tc)),
      adam_(AdamConfig{tc_.lr, 0.9, 0.999, 1e-8}),
      train_rng_(derive_seed(tc_.seed, 1)),
      reseed_rng_(derive_seed(tc_.seed, 2)),
      index_(ExemplarIndex::build(train_clusters, tp)),
      bank_(build_chunk_bank(train_clusters, tp)) {
    const auto errs = tc_.validate();
    if (!errs.empty()) {
        std::string msg = "invalid train config: ";
        for (size_t i = 0; i < errs.size(); ++i) {
            if (i) msg += "; ";
            msg += errs[i];
        }
        throw validation_error(msg);
    }
    recent_.assign(kRecentCap * model_.quantizer().dim(), 0.0);
}

double Trainer::beta_at(size_t s) const {
    const double warmup =
        std::ceil(model_.config().kl_warmup_frac * static_cast<double>(tc_.steps));
    if (warmup <= 0.0) return 1.0;
    const double b = static_cast<double>(s + 1) / warmup;
    return b < 1.0 ? b : 1.0;
}

double Trainer::tau_at(size_t s) const {
    const ModelConfig& mc = model_.config();
    const double anneal =
        std::ceil(mc.tau_frac * static_cast<double>(tc_.steps));
    if (anneal <= 0.0 || static_cast<double>(s) >= anneal) return -1.0;  // hard
    const double frac = static_cast<double>(s) / anneal;
    return mc.tau_start + (mc.tau_end - mc.tau_start) * frac;
}

void Trainer::load_epoch() {
    Rng erng(derive_seed(derive_seed(tc_.seed, 3), epoch_));
    triples_ = make_triples(clusters_, index_, vocab_, tp_, tc_.p_td, bank_, erng);
    if (triples_.empty())
        throw validation_error(
            "training data has no usable pairs (every cluster is a singleton)");
    pos_ = 0;
    epoch_loaded_ = true;
}

SeparatorModel::Batch Trainer::next_batch() {
    if (!epoch_loaded_) load_epoch();
    size_t n = std::min(tc_.batch_size, triples_.size());
    if (pos_ + n > triples_.size()) {
        ++epoch_;
        load_epoch();
        n = std::min(tc_.batch_size, triples_.size());
    }
    SeparatorModel::Batch b;
    b.x_sem.reserve(n);
    b.x_syn.reserve(n);
    b.y.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        const TrainingTriple& t = triples_[pos_ + i];
        b.x_sem.push_back(t.x_sem);
        b.x_syn.push_back(t.x_syn);
        b.y.push_back(t.y);
    }
    pos_ += n;
    return b;
}

void Trainer::remember_recent(const std::vector<double>& flat, size_t rows) {
    const size_t dim = model_.quantizer().dim();
    for (size_t r = 0; r < rows; ++r) {
        std::memcpy(&recent_[recent_next_ * dim], &flat[r * dim],
                    dim * sizeof(double));
        recent_next_ = (recent_next_ + 1) % kRecentCap;
        if (recent_rows_ < kRecentCap) ++recent_rows_;
    }
}

void Trainer::run(size_t n, std::ostream* csv) {
    const bool separator_mode = model_.config().mode == "separator";
    for (size_t i = 0; i < n && step_ < tc_.steps; ++i) {
        SeparatorModel::Batch batch = next_batch();
        const double beta = beta_at(step_);
        auto f = model_.forward(batch, true, beta, &train_rng_);
        const double lt = f.l_total.item();
        if (!std::isfinite(lt)) {
            char buf[256];
            std::snprintf(buf, sizeof buf,
                          "training aborted: non-finite loss at step %zu "
                          "(l_y=%g l_cstr=%g l_kl=%g beta=%g)",
                          step_ + 1, f.l_y.item(), f.l_cstr.item(), f.l_kl.item(),
                          beta);
            throw std::runtime_error(buf);
        }
        model_.params().zero_grads();
        ad::backward(f.l_total);
        adam_.step(model_.params(), tc_.lr);
        if (separator_mode) {
            auto assign =
                model_.quantizer().assign(f.syn_sub, f.batch, tau_at(step_));
            model_.quantizer().ema_update(f.syn_sub, f.batch, assign);
            remember_recent(f.syn_sub, f.batch);
            if (tc_.reseed_every != 0 && (step_ + 1) % tc_.reseed_every == 0 &&
                recent_rows_ > 0) {
                Quantizer& q = model_.quantizer();
                if (recent_rows_ == kRecentCap) {
                    (void)q.reseed_dead_codes(recent_, kRecentCap, tc_.min_usage,
                                              reseed_rng_);
                } else {
                    std::vector<double> head(
                        recent_.begin(),
                        recent_.begin() + recent_rows_ * q.dim());
                    (void)q.reseed_dead_codes(head, recent_rows_, tc_.min_usage,
                                              reseed_rng_);
                }
                q.reset_usage();
            }
        }
        ++step_;
        LossRow row{step_, f.l_y.item(), f.l_cstr.item(), f.l_kl.item(), beta, lt};
        history_.push_back(row);
        if (csv && step_ % tc_.log_every == 0) write_csv_row(*csv, row);
    }
}

void Trainer::write_csv_header(std::ostream& os) {
    os << "step,l_y,l_cstr,l_kl,beta,l_total\n";
}

void Trainer::write_csv_row(std::ostream& os, const LossRow& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.step,
                  r.l_y, r.l_cstr, r.l_kl, r.beta, r.l_total);
    os << buf;
}

void Trainer::save(Checkpoint& ck) const {
    model_.save(ck);
    for (const auto& s : adam_.slots()) {
        ck.put("adam.m." + s.name, {s.m.size()}, s.m);
        ck.put("adam.v." + s.name, {s.v.size()}, s.v);
    }
    if (model_.config().mode == "separator")
        ck.put("trainer.recent", {kRecentCap, model_.quantizer().dim()}, recent_);
    ck.meta["trainer"] = json{{"step", step_},
                              {"epoch", epoch_},
                              {"pos", pos_},
                              {"adam_steps", adam_.steps_taken()},
                              {"train_rng", train_rng_.state()},
                              {"reseed_rng", reseed_rng_.state()},
                              {"recent_rows", recent_rows_},
                              {"recent_next", recent_next_},
                              {"train_config", tc_.to_json()}};
}

void Trainer::load(const Checkpoint& ck) {
    if (!ck.meta.contains("trainer"))
        throw std::runtime_error("checkpoint has no trainer state");
    model_.load(ck);
    const json& t = ck.meta.at("trainer");
    step_ = t.at("step").get<size_t>();
    epoch_ = t.at("epoch").get<size_t>();
    pos_ = t.at("pos").get<size_t>();
    train_rng_.set_state(t.at("train_rng").get<std::string>());
    reseed_rng_.set_state(t.at("reseed_rng").get<std::string>());
    recent_rows_ = t.at("recent_rows").get<size_t>();
    recent_next_ = t.at("recent_next").get<size_t>();
    const uint64_t adam_steps = t.at("adam_steps").get<uint64_t>();
    std::vector<Adam::Slot> slots;
    if (adam_steps > 0) {
        for (const auto& [name, p] : model_.params().items()) {
            Adam::Slot s;
            s.name = name;
            s.m = ck.at("adam.m." + name).data;
            s.v = ck.at("adam.v." + name).data;
            if (s.m.size() != p.size() || s.v.size() != p.size())
                throw std::runtime_error("adam state size mismatch for " + name);
            slots.push_back(std::move(s));
        }
    }
    adam_.restore(adam_steps, std::move(slots));
    if (model_.config().mode == "separator") {
        recent_ = ck.at("trainer.recent").data;
        if (recent_.size() != kRecentCap * model_.quantizer().dim())
            throw std::runtime_error("trainer recent-buffer size mismatch");
    }
    // Rebuild the current epoch's triples deterministically.
    Rng erng(derive_seed(derive_seed(tc_.seed, 3), epoch_));
    triples_ = make_triples(clusters_, index_, vocab_, tp_, tc_.p_td, bank_, erng);
    epoch_loaded_ = true;
}

}  // namespace separator
