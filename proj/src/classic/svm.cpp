#include <cmath>
#include <limits>
#include <list>
#include <unordered_map>

#include "learners.hpp"
#include "odsurv/common/error.hpp"
#include "odsurv/common/rng.hpp"

namespace odsurv::classic {

namespace {

constexpr double kTau = 1e-12;

class Kernel {
public:
    Kernel(const FeatureMatrix& X, bool linear, double gamma) : X_(X), linear_(linear), gamma_(gamma) {
        sq_ = X.rowwise().squaredNorm();
    }

    double operator()(Eigen::Index i, Eigen::Index j) const {
        const double dot = X_.row(i).dot(X_.row(j));
        return linear_ ? dot : std::exp(-gamma_ * std::max(0.0, sq_(i) + sq_(j) - 2 * dot));
    }

    void row(Eigen::Index i, std::vector<double>& out) const {
        const Eigen::VectorXd dots = X_ * X_.row(i).transpose();
        out.resize(static_cast<std::size_t>(dots.size()));
        for (Eigen::Index j = 0; j < dots.size(); ++j)
            out[static_cast<std::size_t>(j)] =
                linear_ ? dots(j) : std::exp(-gamma_ * std::max(0.0, sq_(i) + sq_(j) - 2 * dots(j)));
    }

private:
    const FeatureMatrix& X_;
    bool linear_;
    double gamma_;
    Eigen::VectorXd sq_;
};

// Least-recently-used cache of Q rows (Q_ij = y_i y_j K_ij).
class QCache {
public:
    QCache(const Kernel& k, const std::vector<double>& y, std::size_t bytes) : k_(k), y_(y) {
        capacity_ = std::max<std::size_t>(2, bytes / std::max<std::size_t>(1, y.size() * sizeof(double)));
    }

    const std::vector<double>& row(std::size_t i) {
        auto it = map_.find(i);
        if (it != map_.end()) {
            order_.splice(order_.begin(), order_, it->second.second);
            return it->second.first;
        }
        if (map_.size() >= capacity_) {
            map_.erase(order_.back());
            order_.pop_back();
        }
        order_.push_front(i);
        auto& slot = map_[i];
        slot.second = order_.begin();
        k_.row(static_cast<Eigen::Index>(i), slot.first);
        for (std::size_t j = 0; j < slot.first.size(); ++j) slot.first[j] *= y_[i] * y_[j];
        return slot.first;
    }

private:
    const Kernel& k_;
    const std::vector<double>& y_;
    std::size_t capacity_;
    std::list<std::size_t> order_;
    std::unordered_map<std::size_t, std::pair<std::vector<double>, std::list<std::size_t>::iterator>> map_;
};

struct SmoResult {
    std::vector<double> alpha;
    double rho = 0.0;
};

// Dual C-SVC by sequential minimal optimisation with second-order working
// set selection.
SmoResult smo(const Kernel& kernel, const std::vector<double>& y, const std::vector<double>& Cs, double eps,
              std::size_t cache_bytes) {
    const std::size_t n = y.size();
    std::vector<double> alpha(n, 0.0), G(n, -1.0), QD(n);
    for (std::size_t i = 0; i < n; ++i) QD[i] = kernel(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i));
    QCache cache(kernel, y, cache_bytes);
    auto upper = [&](std::size_t i) { return alpha[i] >= Cs[i]; };
    auto lower = [&](std::size_t i) { return alpha[i] <= 0.0; };

    const std::size_t max_iter = std::max<std::size_t>(10'000'000, n > 21474836 ? n : 100 * n);
    for (std::size_t iter = 0; iter < max_iter; ++iter) {
        double Gmax = -std::numeric_limits<double>::infinity();
        double Gmax2 = -std::numeric_limits<double>::infinity();
        std::ptrdiff_t i = -1;
        for (std::size_t t = 0; t < n; ++t) {
            if (y[t] > 0) {
                if (!upper(t) && -G[t] >= Gmax) {
                    Gmax = -G[t];
                    i = static_cast<std::ptrdiff_t>(t);
                }
            } else if (!lower(t) && G[t] >= Gmax) {
                Gmax = G[t];
                i = static_cast<std::ptrdiff_t>(t);
            }
        }
        std::ptrdiff_t j = -1;
        double obj_min = std::numeric_limits<double>::infinity();
        const std::vector<double>* Qi = nullptr;
        if (i >= 0) Qi = &cache.row(static_cast<std::size_t>(i));
        const auto ui = static_cast<std::size_t>(std::max<std::ptrdiff_t>(i, 0));
        for (std::size_t t = 0; t < n && Qi; ++t) {
            if (y[t] > 0) {
                if (lower(t)) continue;
                const double diff = Gmax + G[t];
                if (G[t] >= Gmax2) Gmax2 = G[t];
                if (diff > 0) {
                    double quad = QD[ui] + QD[t] - 2.0 * y[ui] * (*Qi)[t];
                    if (quad <= 0) quad = kTau;
                    const double obj = -(diff * diff) / quad;
                    if (obj <= obj_min) {
                        j = static_cast<std::ptrdiff_t>(t);
                        obj_min = obj;
                    }
                }
            } else {
                if (upper(t)) continue;
                const double diff = Gmax - G[t];
                if (-G[t] >= Gmax2) Gmax2 = -G[t];
                if (diff > 0) {
                    double quad = QD[ui] + QD[t] + 2.0 * y[ui] * (*Qi)[t];
                    if (quad <= 0) quad = kTau;
                    const double obj = -(diff * diff) / quad;
                    if (obj <= obj_min) {
                        j = static_cast<std::ptrdiff_t>(t);
                        obj_min = obj;
                    }
                }
            }
        }
        if (i < 0 || j < 0 || Gmax + Gmax2 < eps) break;

        const auto a = static_cast<std::size_t>(i), b = static_cast<std::size_t>(j);
        const std::vector<double> Qa = *Qi;  // copy: fetching row b may evict row a
        const std::vector<double>& Qb = cache.row(b);
        const double Ca = Cs[a], Cb = Cs[b];
        const double old_a = alpha[a], old_b = alpha[b];
        if (y[a] != y[b]) {
            double quad = QD[a] + QD[b] + 2 * Qa[b];
            if (quad <= 0) quad = kTau;
            const double delta = (-G[a] - G[b]) / quad;
            const double diff = alpha[a] - alpha[b];
            alpha[a] += delta;
            alpha[b] += delta;
            if (diff > 0) {
                if (alpha[b] < 0) {
                    alpha[b] = 0;
                    alpha[a] = diff;
                }
            } else if (alpha[a] < 0) {
                alpha[a] = 0;
                alpha[b] = -diff;
            }
            if (diff > Ca - Cb) {
                if (alpha[a] > Ca) {
                    alpha[a] = Ca;
                    alpha[b] = Ca - diff;
                }
            } else if (alpha[b] > Cb) {
                alpha[b] = Cb;
                alpha[a] = Cb + diff;
            }
        } else {
            double quad = QD[a] + QD[b] - 2 * Qa[b];
            if (quad <= 0) quad = kTau;
            const double delta = (G[a] - G[b]) / quad;
            const double sum = alpha[a] + alpha[b];
            alpha[a] -= delta;
            alpha[b] += delta;
            if (sum > Ca) {
                if (alpha[a] > Ca) {
                    alpha[a] = Ca;
                    alpha[b] = sum - Ca;
                }
            } else if (alpha[b] < 0) {
                alpha[b] = 0;
                alpha[a] = sum;
            }
            if (sum > Cb) {
                if (alpha[b] > Cb) {
                    alpha[b] = Cb;
                    alpha[a] = sum - Cb;
                }
            } else if (alpha[a] < 0) {
                alpha[a] = 0;
                alpha[b] = sum;
            }
        }
        const double da = alpha[a] - old_a, db = alpha[b] - old_b;
        for (std::size_t t = 0; t < n; ++t) G[t] += Qa[t] * da + Qb[t] * db;
    }

    double ub = std::numeric_limits<double>::infinity(), lb = -ub, sum_free = 0;
    std::size_t n_free = 0;
    for (std::size_t t = 0; t < n; ++t) {
        const double yG = y[t] * G[t];
        if (upper(t)) {
            if (y[t] < 0) ub = std::min(ub, yG);
            else lb = std::max(lb, yG);
        } else if (lower(t)) {
            if (y[t] > 0) ub = std::min(ub, yG);
            else lb = std::max(lb, yG);
        } else {
            ++n_free;
            sum_free += yG;
        }
    }
    SmoResult r;
    r.rho = n_free > 0 ? sum_free / static_cast<double>(n_free) : (ub + lb) / 2;
    r.alpha = std::move(alpha);
    return r;
}

double data_variance(const FeatureMatrix& X) {
    const double mean = X.mean();
    return (X.array() - mean).square().mean();
}

}  // namespace

double PlattSigmoid::operator()(double f) const {
    const double fApB = f * A + B;
    if (fApB >= 0) return std::exp(-fApB) / (1.0 + std::exp(-fApB));
    return 1.0 / (1.0 + std::exp(fApB));
}

PlattSigmoid PlattSigmoid::fit(std::span<const double> dec, std::span<const std::uint8_t> y) {
    double prior1 = 0, prior0 = 0;
    for (auto v : y) (v ? prior1 : prior0) += 1;
    const double hi = (prior1 + 1.0) / (prior1 + 2.0), lo = 1.0 / (prior0 + 2.0);
    const std::size_t n = dec.size();
    std::vector<double> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = y[i] ? hi : lo;

    PlattSigmoid s;
    s.A = 0.0;
    s.B = std::log((prior0 + 1.0) / (prior1 + 1.0));
    auto objective = [&](double A, double B) {
        double f = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double fApB = dec[i] * A + B;
            f += fApB >= 0 ? t[i] * fApB + std::log1p(std::exp(-fApB)) : (t[i] - 1) * fApB + std::log1p(std::exp(fApB));
        }
        return f;
    };
    double fval = objective(s.A, s.B);
    constexpr double kSigma = 1e-12, kMinStep = 1e-10;
    for (int it = 0; it < 100; ++it) {
        double h11 = kSigma, h22 = kSigma, h21 = 0, g1 = 0, g2 = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double fApB = dec[i] * s.A + s.B;
            double p, q;
            if (fApB >= 0) {
                p = std::exp(-fApB) / (1.0 + std::exp(-fApB));
                q = 1.0 / (1.0 + std::exp(-fApB));
            } else {
                p = 1.0 / (1.0 + std::exp(fApB));
                q = std::exp(fApB) / (1.0 + std::exp(fApB));
            }
            const double d2 = p * q;
            h11 += dec[i] * dec[i] * d2;
            h22 += d2;
            h21 += dec[i] * d2;
            const double d1 = t[i] - p;
            g1 += dec[i] * d1;
            g2 += d1;
        }
        if (std::abs(g1) < 1e-5 && std::abs(g2) < 1e-5) break;
        const double det = h11 * h22 - h21 * h21;
        const double dA = -(h22 * g1 - h21 * g2) / det;
        const double dB = -(-h21 * g1 + h11 * g2) / det;
        const double gd = g1 * dA + g2 * dB;
        double step = 1.0;
        while (step >= kMinStep) {
            const double nA = s.A + step * dA, nB = s.B + step * dB;
            const double nf = objective(nA, nB);
            if (nf < fval + 1e-4 * step * gd) {
                s.A = nA;
                s.B = nB;
                fval = nf;
                break;
            }
            step /= 2;
        }
        if (step < kMinStep) break;
    }
    return s;
}

SvmModel SvmModel::fit(const SvmParams& p, const FeatureMatrix& X, std::span<const std::uint8_t> y,
                       std::span<const double> weight, bool probability, std::uint64_t seed) {
    if (p.C <= 0) throw ConfigError("support vector C must be positive");
    if (p.kernel != "linear" && p.kernel != "rbf") throw ConfigError("unknown kernel '" + p.kernel + "'");
    const bool linear = p.kernel == "linear";
    SvmModel m;
    m.p_ = p;
    if (!linear) {
        if (p.gamma) {
            m.gamma_ = *p.gamma;
        } else {
            const double var = data_variance(X);
            m.gamma_ = var > 0 ? 1.0 / (static_cast<double>(X.cols()) * var) : 1.0;
        }
    }
    const std::size_t n = y.size();
    std::vector<double> ys(n), Cs(n);
    for (std::size_t i = 0; i < n; ++i) {
        ys[i] = y[i] ? 1.0 : -1.0;
        Cs[i] = p.C * (weight.empty() ? 1.0 : weight[i]);
    }
    const Kernel kernel(X, linear, m.gamma_);
    const auto r = smo(kernel, ys, Cs, p.eps, p.cache_mb << 20);

    std::vector<Eigen::Index> sv;
    for (std::size_t i = 0; i < n; ++i)
        if (r.alpha[i] > 0) sv.push_back(static_cast<Eigen::Index>(i));
    m.rho_ = r.rho;
    m.coef_.resize(static_cast<Eigen::Index>(sv.size()));
    m.sv_.resize(static_cast<Eigen::Index>(sv.size()), X.cols());
    for (std::size_t k = 0; k < sv.size(); ++k) {
        m.coef_(static_cast<Eigen::Index>(k)) = r.alpha[static_cast<std::size_t>(sv[k])] * ys[static_cast<std::size_t>(sv[k])];
        m.sv_.row(static_cast<Eigen::Index>(k)) = X.row(sv[k]);
    }
    if (linear) {
        m.w_ = m.sv_.transpose() * m.coef_;
        m.sv_.resize(0, X.cols());
    }

    if (probability) {
        // Decision values from 5-fold internal cross-validation, as in libsvm.
        constexpr std::size_t kFolds = 5;
        std::vector<std::size_t> perm(n);
        for (std::size_t i = 0; i < n; ++i) perm[i] = i;
        Engine eng(stream_seed(seed, 0x9A77));
        portable_shuffle(perm, eng);
        std::vector<double> dec(n, 0.0);
        for (std::size_t f = 0; f < kFolds; ++f) {
            const std::size_t begin = f * n / kFolds, end = (f + 1) * n / kFolds;
            std::vector<Eigen::Index> train_idx;
            std::vector<std::uint8_t> ty;
            std::vector<double> tw;
            std::size_t pos = 0;
            for (std::size_t k = 0; k < n; ++k) {
                if (k >= begin && k < end) continue;
                train_idx.push_back(static_cast<Eigen::Index>(perm[k]));
                ty.push_back(y[perm[k]]);
                pos += y[perm[k]];
                if (!weight.empty()) tw.push_back(weight[perm[k]]);
            }
            FeatureMatrix Xv(static_cast<Eigen::Index>(end - begin), X.cols());
            for (std::size_t k = begin; k < end; ++k) Xv.row(static_cast<Eigen::Index>(k - begin)) = X.row(static_cast<Eigen::Index>(perm[k]));
            std::vector<double> fold_dec;
            if (pos == 0 || pos == ty.size()) {
                fold_dec.assign(end - begin, pos == 0 ? -1.0 : 1.0);
            } else {
                FeatureMatrix Xt(static_cast<Eigen::Index>(train_idx.size()), X.cols());
                for (std::size_t k = 0; k < train_idx.size(); ++k) Xt.row(static_cast<Eigen::Index>(k)) = X.row(train_idx[k]);
                SvmParams fp = p;
                fp.gamma = m.gamma_;
                fold_dec = SvmModel::fit(fp, Xt, ty, tw, false, seed).score(Xv);
            }
            for (std::size_t k = begin; k < end; ++k) dec[perm[k]] = fold_dec[k - begin];
        }
        m.platt_ = PlattSigmoid::fit(dec, y);
    }
    return m;
}

std::vector<double> SvmModel::score(const FeatureMatrix& X) const {
    Eigen::VectorXd f;
    if (p_.kernel == "linear") {
        if (X.cols() != w_.size()) throw ShapeError("feature width differs from the trained model");
        f = X * w_;
    } else {
        if (X.cols() != sv_.cols()) throw ShapeError("feature width differs from the trained model");
        const Eigen::VectorXd xs = X.rowwise().squaredNorm();
        const Eigen::VectorXd ss = sv_.rowwise().squaredNorm();
        Eigen::MatrixXd dots = X * sv_.transpose();
        for (Eigen::Index i = 0; i < dots.rows(); ++i)
            for (Eigen::Index k = 0; k < dots.cols(); ++k)
                dots(i, k) = std::exp(-gamma_ * std::max(0.0, xs(i) + ss(k) - 2 * dots(i, k)));
        f = dots * coef_;
    }
    f.array() -= rho_;
    return {f.data(), f.data() + f.size()};
}

std::vector<double> SvmModel::probability(const FeatureMatrix& X) const {
    if (!platt_) throw ConfigError("support vector model was trained without probability calibration");
    auto f = score(X);
    for (auto& v : f) v = (*platt_)(v);
    return f;
}

Json SvmModel::to_json() const {
    Json j{{"architecture", to_string(architecture())}, {"kernel", p_.kernel}, {"C", p_.C}, {"gamma", gamma_}, {"rho", rho_}};
    if (p_.kernel == "linear") {
        j["w"] = std::vector<double>(w_.data(), w_.data() + w_.size());
    } else {
        j["coef"] = std::vector<double>(coef_.data(), coef_.data() + coef_.size());
        j["n_features"] = sv_.cols();
        j["support_vectors"] = std::vector<double>(sv_.data(), sv_.data() + sv_.size());
    }
    if (platt_) j["platt"] = {platt_->A, platt_->B};
    return j;
}

std::unique_ptr<SvmModel> SvmModel::from_json(const Json& j) {
    auto m = std::make_unique<SvmModel>();
    m->p_.kernel = j.at("kernel").get<std::string>();
    m->p_.C = j.at("C").get<double>();
    m->gamma_ = j.at("gamma").get<double>();
    m->rho_ = j.at("rho").get<double>();
    if (m->p_.kernel == "linear") {
        const auto w = j.at("w").get<std::vector<double>>();
        m->w_ = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
    } else {
        const auto c = j.at("coef").get<std::vector<double>>();
        const auto d = j.at("n_features").get<Eigen::Index>();
        const auto s = j.at("support_vectors").get<std::vector<double>>();
        m->coef_ = Eigen::Map<const Eigen::VectorXd>(c.data(), static_cast<Eigen::Index>(c.size()));
        m->sv_ = Eigen::Map<const FeatureMatrix>(s.data(), static_cast<Eigen::Index>(c.size()), d);
    }
    if (j.contains("platt")) m->platt_ = PlattSigmoid{j.at("platt")[0].get<double>(), j.at("platt")[1].get<double>()};
    return m;
}

}  // namespace odsurv::classic
