#pragma once

// Linear discriminant classifier built from two SVDs: one whitens the pooled
// within-class scatter, the other finds the between-class directions in the
// whitened space. Also the evaluation protocols (stratified split, leave-one-
// subject-out) and macro F1.

#include "tapsense/error.hpp"
#include "tapsense/features.hpp"
#include "tapsense/rng.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <thread>
#include <vector>

namespace tapsense {

struct LdaModel {
    std::vector<std::string> class_labels;  // sorted; index = class id
    Eigen::VectorXd global_mean;            // D
    Eigen::MatrixXd whitener;               // D x D, symmetric
    Eigen::MatrixXd projector;              // D x m, orthonormal columns, m = min(C - 1, D)
    Eigen::MatrixXd centroids;              // C x m
    Eigen::VectorXd log_priors;             // C
    double ridge = 1e-6;
    nlohmann::json metadata = nlohmann::json::object();

    size_t dim() const { return size_t(global_mean.size()); }
    size_t class_count() const { return class_labels.size(); }

    /// Coordinates of x in discriminant space.
    Eigen::VectorXd project(const Eigen::VectorXd & x) const {
        if (size_t(x.size()) != dim()) {
            fail(ErrorKind::DimensionMismatch, "feature dim " + std::to_string(x.size()) + " != model dim " + std::to_string(dim()));
        }
        return projector.transpose() * (whitener * (x - global_mean));
    }

    std::optional<size_t> class_index(const std::string & label) const {
        auto it = std::lower_bound(class_labels.begin(), class_labels.end(), label);
        if (it == class_labels.end() || *it != label) return std::nullopt;
        return size_t(it - class_labels.begin());
    }
};

struct RankedLabel {
    std::string label;
    double confidence = 0.0;
    double log_confidence = 0.0;  // exact log-softmax; confidence is its exponential, floored at DBL_MIN
};

/// Every class label exactly once, most confident first.
using PredictionRanking = std::vector<RankedLabel>;

namespace detail {

inline Eigen::VectorXd to_eigen(const std::vector<double> & v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), Eigen::Index(v.size()));
}

// Fixes the sign of each column so its largest-magnitude entry is positive.
inline void canonicalize_signs(Eigen::MatrixXd & m) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
        Eigen::Index best = 0;
        m.col(j).cwiseAbs().maxCoeff(&best);
        if (m(best, j) < 0.0) m.col(j) *= -1.0;
    }
}

inline std::map<std::string, std::vector<size_t>> group_by_label(const Dataset & ds) {
    std::map<std::string, std::vector<size_t>> groups;
    for (size_t i = 0; i < ds.size(); ++i) groups[ds[i].label].push_back(i);
    return groups;
}

} // namespace detail

inline LdaModel train_lda(const Dataset & ds, double ridge = 1e-6) {
    require(ridge > 0.0, "ridge must be positive");
    const auto groups = detail::group_by_label(ds);
    if (groups.size() < 2) fail(ErrorKind::Precondition, "LDA needs at least two classes");
    if (ds.size() <= groups.size()) fail(ErrorKind::Precondition, "LDA needs more samples than classes");
    for (const auto & [label, idx] : groups) {
        if (idx.size() < 2) fail(ErrorKind::Precondition, "class '" + label + "' has fewer than two samples");
    }

    const Eigen::Index D = Eigen::Index(ds.front().features.dim());
    const Eigen::Index N = Eigen::Index(ds.size());
    const Eigen::Index C = Eigen::Index(groups.size());
    for (const auto & s : ds) {
        if (Eigen::Index(s.features.dim()) != D) fail(ErrorKind::DimensionMismatch, "samples have differing dimensions");
    }

    LdaModel model;
    model.ridge = ridge;
    Eigen::MatrixXd means(C, D);
    Eigen::VectorXd counts(C);
    model.global_mean = Eigen::VectorXd::Zero(D);
    {
        Eigen::Index c = 0;
        for (const auto & [label, idx] : groups) {
            model.class_labels.push_back(label);
            Eigen::VectorXd m = Eigen::VectorXd::Zero(D);
            for (size_t i : idx) m += detail::to_eigen(ds[i].features.values);
            model.global_mean += m;
            means.row(c) = (m / double(idx.size())).transpose();
            counts(c) = double(idx.size());
            ++c;
        }
    }
    model.global_mean /= double(N);

    // Within-class deviations, scaled so that Xw^T Xw is the pooled covariance.
    Eigen::MatrixXd within(N, D);
    {
        const double scale = 1.0 / std::sqrt(double(N - C));
        Eigen::Index row = 0, c = 0;
        for (const auto & [label, idx] : groups) {
            for (size_t i : idx) within.row(row++) = (detail::to_eigen(ds[i].features.values).transpose() - means.row(c)) * scale;
            ++c;
        }
    }
    Eigen::BDCSVD<Eigen::MatrixXd> wsvd(within, Eigen::ComputeFullV);
    const Eigen::VectorXd & sv = wsvd.singularValues();
    const double s_max = sv.size() > 0 ? sv.maxCoeff() : 0.0;
    const double floor = s_max > 0.0 ? ridge * s_max : ridge;
    Eigen::VectorXd inv(D);
    for (Eigen::Index i = 0; i < D; ++i) inv(i) = 1.0 / std::max(i < sv.size() ? sv(i) : 0.0, floor);
    const Eigen::MatrixXd & V = wsvd.matrixV();
    // Symmetric whitening is unique even when singular values repeat.
    model.whitener = V * inv.asDiagonal() * V.transpose();

    Eigen::MatrixXd between(C, D);
    for (Eigen::Index c = 0; c < C; ++c) {
        between.row(c) = std::sqrt(counts(c) / double(N)) * (model.whitener * (means.row(c).transpose() - model.global_mean)).transpose();
    }
    Eigen::BDCSVD<Eigen::MatrixXd> bsvd(between, Eigen::ComputeThinV);
    const Eigen::Index m = std::min(C - 1, D);
    model.projector = bsvd.matrixV().leftCols(m);
    detail::canonicalize_signs(model.projector);

    model.centroids.resize(C, m);
    for (Eigen::Index c = 0; c < C; ++c) model.centroids.row(c) = model.project(means.row(c).transpose()).transpose();
    model.log_priors = (counts / double(N)).array().log();
    return model;
}

/// Posterior over classes under the shared-covariance Gaussian model in
/// discriminant space: softmax of -0.5 * squared distance + log prior.
inline PredictionRanking predict(const LdaModel & model, const std::vector<double> & features) {
    const Eigen::VectorXd y = model.project(detail::to_eigen(features));
    const size_t C = model.class_count();
    std::vector<double> scores(C);
    for (size_t c = 0; c < C; ++c) {
        scores[c] = -0.5 * (y - model.centroids.row(Eigen::Index(c)).transpose()).squaredNorm() + model.log_priors(Eigen::Index(c));
    }
    const double top = *std::max_element(scores.begin(), scores.end());
    double z = 0.0;
    for (double s : scores) z += std::exp(s - top);
    const double log_z = top + std::log(z);

    PredictionRanking ranking(C);
    for (size_t c = 0; c < C; ++c) {
        ranking[c].label = model.class_labels[c];
        ranking[c].log_confidence = scores[c] - log_z;
        ranking[c].confidence = std::max(std::exp(ranking[c].log_confidence), std::numeric_limits<double>::min());
    }
    std::stable_sort(ranking.begin(), ranking.end(),
                     [](const RankedLabel & a, const RankedLabel & b) { return a.log_confidence > b.log_confidence; });
    return ranking;
}

inline PredictionRanking predict(const LdaModel & model, const FeatureVector & fv) { return predict(model, fv.values); }

// ---------------------------------------------------------------------------
// Sampling

/// Keeps min(count, per_class_n) samples of every class, drawn uniformly
/// without replacement; survivors keep their original order.
inline Dataset undersample(const Dataset & ds, size_t per_class_n, uint64_t seed) {
    require(per_class_n >= 1, "per-class count must be at least 1");
    Rng rng(seed);
    std::vector<bool> keep(ds.size(), false);
    for (auto & [label, idx] : detail::group_by_label(ds)) {
        if (idx.size() <= per_class_n) {
            for (size_t i : idx) keep[i] = true;
            continue;
        }
        auto pool = idx;
        rng.shuffle(pool);
        for (size_t k = 0; k < per_class_n; ++k) keep[pool[k]] = true;
    }
    Dataset out;
    for (size_t i = 0; i < ds.size(); ++i) {
        if (keep[i]) out.push_back(ds[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Scoring

using Confusion = std::vector<std::vector<long>>;  // rows = truth, columns = prediction

struct ClassScores {
    std::vector<double> precision, recall, f1;
};

inline ClassScores class_scores(const Confusion & m) {
    const size_t C = m.size();
    ClassScores s;
    for (size_t i = 0; i < C; ++i) {
        require(m[i].size() == C, "confusion matrix must be square");
        long tp = m[i][i], row = 0, col = 0;
        for (size_t j = 0; j < C; ++j) {
            require(m[i][j] >= 0 && m[j][i] >= 0, "confusion counts must be non-negative");
            row += m[i][j];
            col += m[j][i];
        }
        const double p = col > 0 ? double(tp) / double(col) : 0.0;
        const double r = row > 0 ? double(tp) / double(row) : 0.0;
        s.precision.push_back(p);
        s.recall.push_back(r);
        s.f1.push_back(p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0);
    }
    return s;
}

inline void require_counts(const Confusion & m) {
    long total = 0;
    for (const auto & row : m) {
        for (long v : row) total += v;
    }
    if (m.empty() || total <= 0) fail(ErrorKind::Precondition, "confusion matrix has no counts");
}

/// Unweighted mean over classes of F1 = 2PR / (P + R), with 0/0 taken as 0.
inline double macro_f1(const Confusion & m) {
    require_counts(m);
    const auto s = class_scores(m);
    double sum = 0.0;
    for (double f : s.f1) sum += f;
    return sum / double(m.size());
}

/// Alternative reading of "macro F1": F1 of the class-averaged precision and recall.
inline double f1_of_mean_precision_recall(const Confusion & m) {
    require_counts(m);
    const auto s = class_scores(m);
    double p = 0.0, r = 0.0;
    for (size_t i = 0; i < m.size(); ++i) {
        p += s.precision[i] / double(m.size());
        r += s.recall[i] / double(m.size());
    }
    return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

// ---------------------------------------------------------------------------
// Evaluation protocols

enum class Protocol { SplitKFold, LOSO };

inline const char * to_string(Protocol p) { return p == Protocol::LOSO ? "loso" : "split"; }

struct EvaluationReport {
    Protocol protocol = Protocol::SplitKFold;
    int repetitions = 0;
    std::vector<std::string> class_labels;
    std::vector<double> macro_f1_values;   // per repetition (split) or per held-out subject (LOSO)
    std::vector<std::string> fold_subjects;
    double macro_f1_mean = 0.0;
    double macro_f1_std = 0.0;
    double f1_of_mean_pr = 0.0;            // over the summed confusion
    std::vector<double> per_class_precision, per_class_recall, per_class_f1;
    Confusion confusion;                   // summed over repetitions / folds
    std::vector<std::string> warnings;
};

struct EvaluationOptions {
    double train_fraction = 0.7;
    size_t per_class_n = 100;
    int repetitions = 5;
    uint64_t seed = 1;
    double ridge = 1e-6;
    unsigned threads = 1;
};

namespace detail {

struct FoldResult {
    Confusion confusion;
    double macro = 0.0;
    std::vector<std::string> warnings;
};

inline Confusion empty_confusion(size_t C) { return Confusion(C, std::vector<long>(C, 0)); }

inline void tally(Confusion & m, const LdaModel & model, const Dataset & test, const std::vector<std::string> & labels) {
    auto index_of = [&](const std::string & l) { return size_t(std::lower_bound(labels.begin(), labels.end(), l) - labels.begin()); };
    for (const auto & s : test) m[index_of(s.label)][index_of(predict(model, s.features).front().label)] += 1;
}

// Macro F1 restricted to classes that occur in the truth or the predictions.
inline double active_macro_f1(const Confusion & m) {
    std::vector<size_t> active;
    for (size_t i = 0; i < m.size(); ++i) {
        long row = 0, col = 0;
        for (size_t j = 0; j < m.size(); ++j) {
            row += m[i][j];
            col += m[j][i];
        }
        if (row > 0 || col > 0) active.push_back(i);
    }
    Confusion sub(active.size(), std::vector<long>(active.size()));
    for (size_t a = 0; a < active.size(); ++a) {
        for (size_t b = 0; b < active.size(); ++b) sub[a][b] = m[active[a]][active[b]];
    }
    return macro_f1(sub);
}

template <class Fn>
void run_parallel(size_t n, unsigned threads, Fn && fn) {
    threads = std::max(1u, std::min<unsigned>(threads, unsigned(n)));
    if (threads == 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            for (size_t i = t; i < n; i += threads) fn(i);
        });
    }
    for (auto & th : pool) th.join();
}

inline void finish_report(EvaluationReport & report, const std::vector<FoldResult> & folds) {
    report.confusion = empty_confusion(report.class_labels.size());
    for (const auto & f : folds) {
        report.macro_f1_values.push_back(f.macro);
        for (size_t i = 0; i < report.confusion.size(); ++i) {
            for (size_t j = 0; j < report.confusion.size(); ++j) report.confusion[i][j] += f.confusion[i][j];
        }
        report.warnings.insert(report.warnings.end(), f.warnings.begin(), f.warnings.end());
    }
    const double n = double(report.macro_f1_values.size());
    double mean = 0.0;
    for (double v : report.macro_f1_values) mean += v / n;
    double var = 0.0;
    for (double v : report.macro_f1_values) var += (v - mean) * (v - mean) / n;
    report.macro_f1_mean = mean;
    report.macro_f1_std = std::sqrt(var);
    const auto s = class_scores(report.confusion);
    report.per_class_precision = s.precision;
    report.per_class_recall = s.recall;
    report.per_class_f1 = s.f1;
    report.f1_of_mean_pr = f1_of_mean_precision_recall(report.confusion);
}

} // namespace detail

/// Repeated stratified train/test split; the training side is under-sampled
/// before every fit. Reports mean and (population) std of macro F1.
inline EvaluationReport evaluate_split(const Dataset & ds, const EvaluationOptions & opt = {}) {
    require(!ds.empty(), "dataset is empty");
    require(opt.train_fraction > 0.0 && opt.train_fraction < 1.0, "train fraction must lie strictly between 0 and 1");
    require(opt.repetitions >= 1, "need at least one repetition");
    const auto groups = detail::group_by_label(ds);
    for (const auto & [label, idx] : groups) {
        if (idx.size() < 2) fail(ErrorKind::Precondition, "class '" + label + "' has fewer than two samples");
    }

    EvaluationReport report;
    report.protocol = Protocol::SplitKFold;
    report.repetitions = opt.repetitions;
    for (const auto & g : groups) report.class_labels.push_back(g.first);

    std::vector<detail::FoldResult> folds(size_t(opt.repetitions));
    detail::run_parallel(folds.size(), opt.threads, [&](size_t r) {
        Rng rng(derive_seed(opt.seed, r));
        Dataset train, test;
        for (const auto & [label, idx] : groups) {
            auto pool = idx;
            rng.shuffle(pool);
            const size_t n_train = std::clamp<size_t>(size_t(std::lround(opt.train_fraction * double(pool.size()))), 1, pool.size() - 1);
            std::sort(pool.begin(), pool.begin() + long(n_train));
            std::sort(pool.begin() + long(n_train), pool.end());
            for (size_t k = 0; k < pool.size(); ++k) (k < n_train ? train : test).push_back(ds[pool[k]]);
        }
        const auto model = train_lda(undersample(train, opt.per_class_n, derive_seed(opt.seed, 1000 + r)), opt.ridge);
        folds[r].confusion = detail::empty_confusion(report.class_labels.size());
        detail::tally(folds[r].confusion, model, test, report.class_labels);
        folds[r].macro = macro_f1(folds[r].confusion);
    });
    detail::finish_report(report, folds);
    return report;
}

/// Leave-one-subject-out: one fold per subject, trained on everyone else.
/// Classes missing from a fold's training side are never predicted there and
/// so score 0; a warning is recorded.
inline EvaluationReport evaluate_loso(const Dataset & ds, const EvaluationOptions & opt = {}) {
    std::set<std::string> subjects;
    for (const auto & s : ds) subjects.insert(s.subject_id);
    if (subjects.size() < 2) fail(ErrorKind::Precondition, "LOSO needs at least two subjects");

    EvaluationReport report;
    report.protocol = Protocol::LOSO;
    report.repetitions = int(subjects.size());
    for (const auto & g : detail::group_by_label(ds)) report.class_labels.push_back(g.first);
    report.fold_subjects.assign(subjects.begin(), subjects.end());

    std::vector<detail::FoldResult> folds(report.fold_subjects.size());
    detail::run_parallel(folds.size(), opt.threads, [&](size_t f) {
        const auto & held_out = report.fold_subjects[f];
        Dataset train, test;
        for (const auto & s : ds) (s.subject_id == held_out ? test : train).push_back(s);

        auto & fold = folds[f];
        const auto groups = detail::group_by_label(train);
        Dataset usable;
        for (const auto & label : report.class_labels) {
            auto it = groups.find(label);
            if (it == groups.end() || it->second.size() < 2) {
                fold.warnings.push_back("fold '" + held_out + "': class '" + label + "' missing from training side, scored 0");
                continue;
            }
            for (size_t i : it->second) usable.push_back(train[i]);
        }
        const auto model = train_lda(undersample(usable, opt.per_class_n, derive_seed(opt.seed, 2000 + f)), opt.ridge);
        fold.confusion = detail::empty_confusion(report.class_labels.size());
        detail::tally(fold.confusion, model, test, report.class_labels);
        fold.macro = detail::active_macro_f1(fold.confusion);
    });
    detail::finish_report(report, folds);
    return report;
}

// ---------------------------------------------------------------------------
// Persistence

inline constexpr const char * kModelFormat = "tapsense.lda";
inline constexpr int kModelFormatVersion = 1;

namespace detail {

inline nlohmann::json matrix_json(const Eigen::MatrixXd & m) {
    std::vector<double> flat;
    flat.reserve(size_t(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) flat.push_back(m(i, j));
    }
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", flat}};
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json & j, const std::string & where) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (rows < 0 || cols < 0 || Eigen::Index(data.size()) != rows * cols) fail(ErrorKind::MalformedInput, where + ": matrix size mismatch");
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j2 = 0; j2 < cols; ++j2) m(i, j2) = data[size_t(i * cols + j2)];
    }
    return m;
}

} // namespace detail

inline nlohmann::json model_to_json(const LdaModel & m) {
    return {
        {"format", kModelFormat},
        {"format_version", kModelFormatVersion},
        {"class_labels", m.class_labels},
        {"dim", m.dim()},
        {"global_mean", std::vector<double>(m.global_mean.data(), m.global_mean.data() + m.global_mean.size())},
        {"whitener", detail::matrix_json(m.whitener)},
        {"projector", detail::matrix_json(m.projector)},
        {"centroids", detail::matrix_json(m.centroids)},
        {"log_priors", std::vector<double>(m.log_priors.data(), m.log_priors.data() + m.log_priors.size())},
        {"ridge", m.ridge},
        {"metadata", m.metadata},
    };
}

inline LdaModel model_from_json(const nlohmann::json & j) {
    try {
        if (j.at("format").get<std::string>() != kModelFormat) fail(ErrorKind::MalformedInput, "not a tapsense LDA model");
        const int version = j.at("format_version").get<int>();
        if (version != kModelFormatVersion) fail(ErrorKind::UnsupportedVersion, "model format version " + std::to_string(version));
        LdaModel m;
        m.class_labels = j.at("class_labels").get<std::vector<std::string>>();
        m.global_mean = detail::to_eigen(j.at("global_mean").get<std::vector<double>>());
        m.whitener = detail::matrix_from_json(j.at("whitener"), "whitener");
        m.projector = detail::matrix_from_json(j.at("projector"), "projector");
        m.centroids = detail::matrix_from_json(j.at("centroids"), "centroids");
        m.log_priors = detail::to_eigen(j.at("log_priors").get<std::vector<double>>());
        m.ridge = j.at("ridge").get<double>();
        if (j.contains("metadata")) m.metadata = j.at("metadata");

        const auto D = Eigen::Index(m.dim()), C = Eigen::Index(m.class_count());
        if (m.whitener.rows() != D || m.whitener.cols() != D || m.projector.rows() != D || m.centroids.rows() != C ||
            m.centroids.cols() != m.projector.cols() || m.log_priors.size() != C || j.at("dim").get<Eigen::Index>() != D ||
            !std::is_sorted(m.class_labels.begin(), m.class_labels.end())) {
            fail(ErrorKind::MalformedInput, "model fields have inconsistent shapes");
        }
        return m;
    } catch (const nlohmann::json::exception & e) {
        fail(ErrorKind::MalformedInput, std::string("model json: ") + e.what());
    }
}

inline nlohmann::json report_to_json(const EvaluationReport & r) {
    return {
        {"format", "tapsense.evaluation"},
        {"format_version", 1},
        {"protocol", to_string(r.protocol)},
        {"repetitions", r.repetitions},
        {"class_labels", r.class_labels},
        {"macro_f1_values", r.macro_f1_values},
        {"fold_subjects", r.fold_subjects},
        {"macro_f1_mean", r.macro_f1_mean},
        {"macro_f1_std", r.macro_f1_std},
        {"f1_of_mean_pr", r.f1_of_mean_pr},
        {"per_class_precision", r.per_class_precision},
        {"per_class_recall", r.per_class_recall},
        {"per_class_f1", r.per_class_f1},
        {"confusion", r.confusion},
        {"warnings", r.warnings},
    };
}

inline EvaluationReport report_from_json(const nlohmann::json & j) {
    try {
        if (j.at("format_version").get<int>() != 1) fail(ErrorKind::UnsupportedVersion, "evaluation report version");
        EvaluationReport r;
        r.protocol = j.at("protocol").get<std::string>() == "loso" ? Protocol::LOSO : Protocol::SplitKFold;
        r.repetitions = j.at("repetitions").get<int>();
        r.class_labels = j.at("class_labels").get<std::vector<std::string>>();
        r.macro_f1_values = j.at("macro_f1_values").get<std::vector<double>>();
        r.fold_subjects = j.at("fold_subjects").get<std::vector<std::string>>();
        r.macro_f1_mean = j.at("macro_f1_mean").get<double>();
        r.macro_f1_std = j.at("macro_f1_std").get<double>();
        r.f1_of_mean_pr = j.at("f1_of_mean_pr").get<double>();
        r.per_class_precision = j.at("per_class_precision").get<std::vector<double>>();
        r.per_class_recall = j.at("per_class_recall").get<std::vector<double>>();
        r.per_class_f1 = j.at("per_class_f1").get<std::vector<double>>();
        r.confusion = j.at("confusion").get<Confusion>();
        r.warnings = j.at("warnings").get<std::vector<std::string>>();
        return r;
    } catch (const nlohmann::json::exception & e) {
        fail(ErrorKind::MalformedInput, std::string("report json: ") + e.what());
    }
}

} // namespace tapsense
