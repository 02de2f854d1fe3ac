#include "separator/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace separator {

using ad::Shape;
using ad::Tensor;

Quantizer::Quantizer(QuantizerConfig cfg) : cfg_(cfg) {
    if (cfg_.heads == 0 || cfg_.K == 0 || cfg_.d_code == 0)
        throw std::invalid_argument("Quantizer: heads, K and d_code must be positive");
    emb_.reserve(cfg_.heads);
    for (size_t h = 0; h < cfg_.heads; ++h) {
        emb_.push_back(Tensor::zeros({cfg_.K, cfg_.d_code}));
        counts_.emplace_back(cfg_.K, 0.0);
        sums_.emplace_back(cfg_.K * cfg_.d_code, 0.0);
        usage_.emplace_back(cfg_.K, 0.0);
    }
}

double Quantizer::dist2(size_t head, size_t k, const double* sub) const {
    const double* e = &emb_[head].values()[k * cfg_.d_code];
    double d = 0.0;
    for (size_t j = 0; j < cfg_.d_code; ++j) {
        const double t = sub[j] - e[j];
        d += t * t;
    }
    return d;
}

std::vector<double> Quantizer::soft_assign(const double* sub_head, size_t head,
                                           double temperature) const {
    std::vector<double> d2(cfg_.K);
    for (size_t k = 0; k < cfg_.K; ++k) d2[k] = dist2(head, k, sub_head);
    std::vector<double> resp(cfg_.K, 0.0);
    if (temperature <= 0.0) {
        size_t best = 0;
        for (size_t k = 1; k < cfg_.K; ++k)
            if (d2[k] < d2[best]) best = k;
        resp[best] = 1.0;
        return resp;
    }
    const double lo = *std::min_element(d2.begin(), d2.end());
    double z = 0.0;
    for (size_t k = 0; k < cfg_.K; ++k) {
        resp[k] = std::exp(-(d2[k] - lo) / temperature);
        z += resp[k];
    }
    for (size_t k = 0; k < cfg_.K; ++k) resp[k] /= z;
    return resp;
}

CodeAssignment Quantizer::assign(const std::vector<double>& flat, size_t batch,
                                 double temperature) const {
    const size_t d = dim();
    if (batch == 0 || flat.size() != batch * d)
        throw std::invalid_argument("Quantizer::assign: flat size does not match batch");
    CodeAssignment a;
    a.codes.assign(batch, std::vector<int>(cfg_.heads, 0));
    a.resp.assign(batch, {});
    for (size_t b = 0; b < batch; ++b) {
        a.resp[b].reserve(cfg_.heads);
        for (size_t h = 0; h < cfg_.heads; ++h) {
            const double* sub = &flat[b * d + h * cfg_.d_code];
            std::vector<double> d2(cfg_.K);
            for (size_t k = 0; k < cfg_.K; ++k) d2[k] = dist2(h, k, sub);
            size_t best = 0;
            for (size_t k = 1; k < cfg_.K; ++k)
                if (d2[k] < d2[best]) best = k;  // strict: ties keep the lowest index
            a.codes[b][h] = static_cast<int>(best);
            std::vector<double> resp(cfg_.K, 0.0);
            if (temperature <= 0.0) {
                resp[best] = 1.0;
            } else {
                const double lo = d2[best];
                double z = 0.0;
                for (size_t k = 0; k < cfg_.K; ++k) {
                    resp[k] = std::exp(-(d2[k] - lo) / temperature);
                    z += resp[k];
                }
                for (size_t k = 0; k < cfg_.K; ++k) resp[k] /= z;
            }
            a.resp[b].push_back(std::move(resp));
        }
    }
    return a;
}

Quantizer::Result Quantizer::quantize(const Tensor& sub) {
    if (sub.rank() != 2 || sub.shape()[1] != dim())
        throw ad::shape_error("Quantizer::quantize: expected [B, " +
                              std::to_string(dim()) + "], got " + ad::shape_str(sub.shape()));
    const size_t B = sub.shape()[0];
    Result r;
    r.assignment = assign(sub.values(), B, -1.0);  // forward is always hard

    std::vector<Tensor> parts;
    parts.reserve(cfg_.heads);
    for (size_t h = 0; h < cfg_.heads; ++h) {
        std::vector<int> ids(B);
        for (size_t b = 0; b < B; ++b) ids[b] = r.assignment.codes[b][h];
        parts.push_back(ad::embedding_lookup(emb_[h], ids, {B}));
    }
    const Tensor q = cfg_.heads == 1 ? parts[0] : ad::concat(parts, 1);

    r.z_syn = ad::straight_through(sub, q);
    const Tensor diff = ad::add(sub, ad::scale(q, -1.0));
    const Tensor norms = ad::norm_last(
        ad::reshape(diff, {B * cfg_.heads, cfg_.d_code}));
    r.l_cstr = ad::scale(ad::sum_all(norms), cfg_.lambda / static_cast<double>(B));
    return r;
}

void Quantizer::init_from_batch(const std::vector<double>& flat, size_t batch, Rng& rng) {
    const size_t d = dim();
    if (batch == 0 || flat.size() != batch * d)
        throw std::invalid_argument("Quantizer::init_from_batch: flat size does not match batch");
    for (size_t h = 0; h < cfg_.heads; ++h) {
        auto row = [&](size_t b) { return &flat[b * d + h * cfg_.d_code]; };
        std::vector<double>& e = emb_[h].values();
        // D^2-weighted draws spread the seeds across the occupied regions of
        // the batch instead of betting on a lucky uniform draw.
        std::vector<double> d2min(batch, 0.0);
        for (size_t k = 0; k < cfg_.K; ++k) {
            size_t pick;
            if (k == 0) {
                pick = rng.below(batch);
            } else {
                double total = 0.0;
                for (size_t b = 0; b < batch; ++b) total += d2min[b];
                if (total <= 1e-300) {
                    pick = rng.below(batch);
                } else {
                    const double r = rng.uniform() * total;
                    double cum = 0.0;
                    pick = batch - 1;
                    for (size_t b = 0; b < batch; ++b) {
                        cum += d2min[b];
                        if (r < cum) { pick = b; break; }
                    }
                }
            }
            std::copy(row(pick), row(pick) + cfg_.d_code, &e[k * cfg_.d_code]);
            for (size_t b = 0; b < batch; ++b) {
                double dd = 0.0;
                for (size_t j = 0; j < cfg_.d_code; ++j) {
                    const double t = row(b)[j] - e[k * cfg_.d_code + j];
                    dd += t * t;
                }
                if (k == 0 || dd < d2min[b]) d2min[b] = dd;
            }
        }
        // Jitter separates codes seeded from duplicate rows.
        for (double& v : e) v += rng.normal(0.0, 0.01);
        std::fill(counts_[h].begin(), counts_[h].end(), 1.0);
        for (size_t k = 0; k < cfg_.K; ++k)
            std::copy(&e[k * cfg_.d_code], &e[(k + 1) * cfg_.d_code],
                      &sums_[h][k * cfg_.d_code]);
        std::fill(usage_[h].begin(), usage_[h].end(), 0.0);
    }
    initialized_ = true;
}

void Quantizer::ema_update(const std::vector<double>& flat, size_t batch,
                           const CodeAssignment& assignment) {
    const size_t d = dim();
    if (batch == 0 || flat.size() != batch * d)
        throw std::invalid_argument("Quantizer::ema_update: flat size does not match batch");
    if (assignment.codes.size() != batch || assignment.resp.size() != batch)
        throw std::invalid_argument("Quantizer::ema_update: assignment batch mismatch");
    const double g = cfg_.gamma;
    for (size_t h = 0; h < cfg_.heads; ++h) {
        std::vector<double> bc(cfg_.K, 0.0);
        std::vector<double> bs(cfg_.K * cfg_.d_code, 0.0);
        for (size_t b = 0; b < batch; ++b) {
            const double* sub = &flat[b * d + h * cfg_.d_code];
            const std::vector<double>& resp = assignment.resp[b][h];
            for (size_t k = 0; k < cfg_.K; ++k) {
                const double r = resp[k];
                if (r == 0.0) continue;
                bc[k] += r;
                for (size_t j = 0; j < cfg_.d_code; ++j)
                    bs[k * cfg_.d_code + j] += r * sub[j];
            }
            usage_[h][static_cast<size_t>(assignment.codes[b][h])] += 1.0;
        }
        // Raw-count EMA: batch statistics enter unnormalized.
        std::vector<double>& e = emb_[h].values();
        for (size_t k = 0; k < cfg_.K; ++k) {
            counts_[h][k] = g * counts_[h][k] + (1.0 - g) * bc[k];
            const double denom = std::max(counts_[h][k], cfg_.eps);
            for (size_t j = 0; j < cfg_.d_code; ++j) {
                const size_t i = k * cfg_.d_code + j;
                sums_[h][i] = g * sums_[h][i] + (1.0 - g) * bs[i];
                e[i] = sums_[h][i] / denom;
                if (!std::isfinite(e[i]))
                    throw std::runtime_error("Quantizer::ema_update: non-finite embedding");
            }
        }
    }
}

size_t Quantizer::reseed_dead_codes(const std::vector<double>& recent_flat,
                                    size_t n_recent, double min_usage, Rng& rng) {
    const size_t d = dim();
    if (n_recent == 0 || recent_flat.size() != n_recent * d)
        throw std::invalid_argument("Quantizer::reseed_dead_codes: recent size mismatch");
    size_t reseeded = 0;
    for (size_t h = 0; h < cfg_.heads; ++h) {
        std::vector<double>& e = emb_[h].values();
        for (size_t k = 0; k < cfg_.K; ++k) {
            if (usage_[h][k] >= min_usage) continue;
            const size_t pick = rng.below(n_recent);
            const double* sub = &recent_flat[pick * d + h * cfg_.d_code];
            std::copy(sub, sub + cfg_.d_code, &e[k * cfg_.d_code]);
            counts_[h][k] = 1.0;
            std::copy(sub, sub + cfg_.d_code, &sums_[h][k * cfg_.d_code]);
            ++reseeded;
        }
    }
    return reseeded;
}

void Quantizer::reset_usage() {
    for (auto& u : usage_) std::fill(u.begin(), u.end(), 0.0);
}

Tensor Quantizer::lookup_codes(const std::vector<std::vector<int>>& codes) const {
    const size_t B = codes.size();
    if (B == 0) throw std::invalid_argument("Quantizer::lookup_codes: empty batch");
    std::vector<double> out(B * dim());
    for (size_t b = 0; b < B; ++b) {
        if (codes[b].size() != cfg_.heads)
            throw std::invalid_argument("Quantizer::lookup_codes: wrong head count");
        for (size_t h = 0; h < cfg_.heads; ++h) {
            const int c = codes[b][h];
            if (c < 0 || static_cast<size_t>(c) >= cfg_.K)
                throw std::invalid_argument("Quantizer::lookup_codes: code out of range");
            const double* e = &emb_[h].values()[static_cast<size_t>(c) * cfg_.d_code];
            std::copy(e, e + cfg_.d_code, &out[b * dim() + h * cfg_.d_code]);
        }
    }
    return Tensor::from_values({B, dim()}, std::move(out));
}

void Quantizer::set_embeddings(size_t head, const std::vector<double>& v) {
    if (head >= cfg_.heads || v.size() != cfg_.K * cfg_.d_code)
        throw std::invalid_argument("Quantizer::set_embeddings: size mismatch");
    emb_[head].values() = v;
}

void Quantizer::save(Checkpoint& ck, const std::string& prefix) const {
    for (size_t h = 0; h < cfg_.heads; ++h) {
        const std::string base = prefix + ".h" + std::to_string(h);
        ck.put(base + ".embeddings", {cfg_.K, cfg_.d_code}, emb_[h].values());
        ck.put(base + ".ema_counts", {cfg_.K}, counts_[h]);
        ck.put(base + ".ema_sums", {cfg_.K, cfg_.d_code}, sums_[h]);
        ck.put(base + ".usage", {cfg_.K}, usage_[h]);
    }
    ck.put(prefix + ".initialized", {1}, {initialized_ ? 1.0 : 0.0});
}

void Quantizer::load(const Checkpoint& ck, const std::string& prefix) {
    for (size_t h = 0; h < cfg_.heads; ++h) {
        const std::string base = prefix + ".h" + std::to_string(h);
        ck.load_into(base + ".embeddings", emb_[h]);
        const auto& ec = ck.at(base + ".ema_counts");
        const auto& es = ck.at(base + ".ema_sums");
        const auto& eu = ck.at(base + ".usage");
        if (ec.data.size() != cfg_.K || es.data.size() != cfg_.K * cfg_.d_code ||
            eu.data.size() != cfg_.K)
            throw std::runtime_error("Quantizer::load: stored shapes do not match config");
        counts_[h] = ec.data;
        sums_[h] = es.data;
        usage_[h] = eu.data;
    }
    initialized_ = ck.at(prefix + ".initialized").data.at(0) != 0.0;
}

}  // namespace separator
