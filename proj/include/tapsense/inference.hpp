#pragma once

// From per-tap rankings to ranked guesses for whole PINs and words: exact
// top-k enumeration of the product space, joint k-gram language model,
// fusion of the two, dictionary scoring and recovery curves.

#include "tapsense/classify.hpp"
#include "tapsense/error.hpp"
#include "tapsense/rng.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <queue>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace tapsense {

using Symbols = std::vector<std::string>;

/// One symbol per character.
inline Symbols symbols_of(const std::string & text) {
    Symbols out;
    for (char ch : text) out.emplace_back(1, ch);
    return out;
}

inline std::string join_symbols(const Symbols & s) {
    std::string out;
    for (const auto & x : s) out += x;
    return out;
}

/// Ranking built from raw confidences, e.g. {{"a", 0.9}, {"b", 0.1}}.
inline PredictionRanking ranking_from_confidences(const std::vector<std::pair<std::string, double>> & conf) {
    PredictionRanking r;
    for (const auto & [label, c] : conf) {
        require(c > 0.0 && c <= 1.0, "confidence must lie in (0, 1]");
        r.push_back({label, c, std::log(c)});
    }
    std::stable_sort(r.begin(), r.end(), [](const RankedLabel & a, const RankedLabel & b) {
        if (a.log_confidence != b.log_confidence) return a.log_confidence > b.log_confidence;
        return a.label < b.label;
    });
    return r;
}

struct ScoredSequence {
    Symbols symbols;
    double log_score = 0.0;
};

struct Enumeration {
    std::vector<ScoredSequence> sequences;
    bool exhausted = false;  // k exceeded the size of the (restricted) space
};

namespace detail {

// Per-position log confidences indexed by label id (labels sorted).
struct Lattice {
    std::vector<std::string> labels;
    std::vector<std::vector<double>> logc;   // [position][label id]
    std::vector<std::vector<size_t>> order;  // [position] label ids, best first, ties by label
};

inline Lattice build_lattice(const std::vector<PredictionRanking> & rankings, std::optional<size_t> depth_limit) {
    require(!rankings.empty(), "need at least one ranking");
    Lattice lat;
    for (const auto & e : rankings.front()) lat.labels.push_back(e.label);
    std::sort(lat.labels.begin(), lat.labels.end());
    require(std::adjacent_find(lat.labels.begin(), lat.labels.end()) == lat.labels.end(), "ranking repeats a label");
    const size_t V = lat.labels.size();
    require(V >= 1, "rankings must not be empty");
    if (depth_limit) require(*depth_limit >= 1 && *depth_limit <= V, "depth limit must lie in [1, alphabet size]");
    const size_t depth = depth_limit.value_or(V);

    for (const auto & r : rankings) {
        require(r.size() == V, "all rankings must cover the same alphabet");
        std::vector<double> lc(V, std::numeric_limits<double>::quiet_NaN());
        for (const auto & e : r) {
            auto it = std::lower_bound(lat.labels.begin(), lat.labels.end(), e.label);
            require(it != lat.labels.end() && *it == e.label, "all rankings must cover the same alphabet");
            lc[size_t(it - lat.labels.begin())] = e.log_confidence;
        }
        for (double v : lc) require(!std::isnan(v), "all rankings must cover the same alphabet");
        std::vector<size_t> ord(V);
        for (size_t i = 0; i < V; ++i) ord[i] = i;
        std::stable_sort(ord.begin(), ord.end(), [&](size_t a, size_t b) { return lc[a] > lc[b]; });
        ord.resize(depth);
        lat.logc.push_back(std::move(lc));
        lat.order.push_back(std::move(ord));
    }
    return lat;
}

// Summed left to right so the value does not depend on how a sequence was reached.
inline double path_score(const Lattice & lat, const std::vector<size_t> & ids) {
    double s = 0.0;
    for (size_t p = 0; p < ids.size(); ++p) s += lat.logc[p][ids[p]];
    return s;
}

inline bool ranks_before(double sa, const std::vector<size_t> & a, double sb, const std::vector<size_t> & b) {
    if (sa != sb) return sa > sb;
    return a < b;  // label ids follow label order, so this is lexicographic on symbols
}

inline double space_size(size_t depth, size_t n) {
    return std::pow(double(depth), double(n));
}

} // namespace detail

/// The k best sequences by summed log confidence, each position restricted to
/// its top depth_limit labels. Ties are broken lexicographically.
///
/// Best-first search over index tuples into the per-position sorted lists. A
/// tuple's parent is the tuple with its last nonzero index decremented, so a
/// state may only advance positions at or after its own last nonzero index
/// and every tuple is generated exactly once. Scores never increase along an
/// edge, hence pops come out in non-increasing score order; popping continues
/// through the k-th score's tie group before the final lexicographic sort.
inline Enumeration enumerate_topk(const std::vector<PredictionRanking> & rankings, size_t k,
                                  std::optional<size_t> depth_limit = std::nullopt) {
    require(k >= 1, "k must be at least 1");
    const auto lat = detail::build_lattice(rankings, depth_limit);
    const size_t n = rankings.size();
    const size_t depth = lat.order.front().size();

    struct State {
        double score;
        std::vector<size_t> ids;  // label ids
        std::vector<size_t> pos;  // indices into lat.order
        size_t pivot;
    };
    auto worse = [](const State & a, const State & b) { return detail::ranks_before(b.score, b.ids, a.score, a.ids); };
    std::priority_queue<State, std::vector<State>, decltype(worse)> heap(worse);

    State start{0.0, std::vector<size_t>(n), std::vector<size_t>(n, 0), 0};
    for (size_t p = 0; p < n; ++p) start.ids[p] = lat.order[p][0];
    start.score = detail::path_score(lat, start.ids);
    heap.push(std::move(start));

    std::vector<State> popped;
    while (!heap.empty()) {
        if (popped.size() >= k && heap.top().score < popped[k - 1].score) break;
        State s = heap.top();
        heap.pop();
        for (size_t p = s.pivot; p < n; ++p) {
            if (s.pos[p] + 1 >= depth) continue;
            State c = s;
            c.pos[p] += 1;
            c.ids[p] = lat.order[p][c.pos[p]];
            c.pivot = p;
            c.score = detail::path_score(lat, c.ids);
            heap.push(std::move(c));
        }
        popped.push_back(std::move(s));
    }

    std::stable_sort(popped.begin(), popped.end(),
                     [](const State & a, const State & b) { return detail::ranks_before(a.score, a.ids, b.score, b.ids); });
    Enumeration out;
    out.exhausted = double(k) > detail::space_size(depth, n);
    for (size_t i = 0; i < std::min(k, popped.size()); ++i) {
        ScoredSequence seq;
        for (size_t id : popped[i].ids) seq.symbols.push_back(lat.labels[id]);
        seq.log_score = popped[i].score;
        out.sequences.push_back(std::move(seq));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Language model

struct NgramModel {
    int order_k = 3;
    std::vector<std::string> alphabet;  // sorted
    double smoothing_delta = 0.01;
    std::map<std::string, double> gram_log_probs;  // observed windows (joined symbols)
    double unseen_log_prob = -std::numeric_limits<double>::infinity();
    long total_windows = 0;

    bool contains(const std::string & symbol) const { return std::binary_search(alphabet.begin(), alphabet.end(), symbol); }

    double gram_log_prob(const Symbols & window) const {
        require(window.size() == size_t(order_k), "window length must equal the model order");
        auto it = gram_log_probs.find(join_symbols(window));
        return it == gram_log_probs.end() ? unseen_log_prob : it->second;
    }
};

/// Lowercases the text and splits it into words made only of alphabet symbols;
/// any other character ends the current word.
inline std::vector<Symbols> tokenize_corpus(const std::string & text, const std::vector<std::string> & alphabet) {
    std::set<std::string> allowed(alphabet.begin(), alphabet.end());
    std::vector<Symbols> words;
    Symbols current;
    auto flush = [&] {
        if (!current.empty()) words.push_back(std::move(current));
        current.clear();
    };
    for (char ch : text) {
        const std::string sym(1, char(std::tolower(static_cast<unsigned char>(ch))));
        if (allowed.count(sym)) {
            current.push_back(sym);
        } else {
            flush();
        }
    }
    flush();
    return words;
}

/// Joint k-gram probabilities with additive smoothing:
/// p(g) = (count(g) + delta) / (total + delta * V^k), windows never crossing words.
inline NgramModel train_ngram(const std::vector<Symbols> & corpus, int order_k, std::vector<std::string> alphabet,
                              double smoothing_delta = 0.01) {
    require(order_k >= 2, "n-gram order must be at least 2");
    require(smoothing_delta >= 0.0, "smoothing delta must be non-negative");
    std::sort(alphabet.begin(), alphabet.end());
    alphabet.erase(std::unique(alphabet.begin(), alphabet.end()), alphabet.end());
    require(!alphabet.empty(), "alphabet is empty");

    NgramModel m;
    m.order_k = order_k;
    m.alphabet = alphabet;
    m.smoothing_delta = smoothing_delta;

    std::map<std::string, long> counts;
    bool any_symbol = false;
    for (const auto & word : corpus) {
        Symbols kept;
        for (const auto & s : word) {
            if (m.contains(s)) kept.push_back(s);
        }
        any_symbol = any_symbol || !kept.empty();
        for (size_t i = 0; i + size_t(order_k) <= kept.size(); ++i) {
            counts[join_symbols(Symbols(kept.begin() + long(i), kept.begin() + long(i) + order_k))] += 1;
            m.total_windows += 1;
        }
    }
    if (!any_symbol) fail(ErrorKind::Precondition, "corpus is empty after filtering to the alphabet");
    const double denom = double(m.total_windows) + smoothing_delta * std::pow(double(alphabet.size()), order_k);
    if (denom <= 0.0) fail(ErrorKind::Precondition, "corpus has no complete window and smoothing is zero");
    for (const auto & [gram, c] : counts) m.gram_log_probs[gram] = std::log((double(c) + smoothing_delta) / denom);
    m.unseen_log_prob = smoothing_delta > 0.0 ? std::log(smoothing_delta / denom) : -std::numeric_limits<double>::infinity();
    return m;
}

inline NgramModel train_ngram(const std::string & text, int order_k, const std::vector<std::string> & alphabet,
                              double smoothing_delta = 0.01) {
    return train_ngram(tokenize_corpus(text, alphabet), order_k, alphabet, smoothing_delta);
}

/// Sum of log p over the n - k + 1 sliding windows. Sequences shorter than k
/// score 0 (empty product) and set *too_short.
inline double ngram_log_prob(const NgramModel & m, const Symbols & seq, bool * too_short = nullptr) {
    const size_t k = size_t(m.order_k);
    if (too_short) *too_short = seq.size() < k;
    if (seq.size() < k) return 0.0;
    double s = 0.0;
    for (size_t i = 0; i + k <= seq.size(); ++i) s += m.gram_log_prob(Symbols(seq.begin() + long(i), seq.begin() + long(i + k)));
    return s;
}

inline constexpr size_t kFusionPoolFactor = 10;

/// Classifier candidates (pool of k * pool_factor) rescored by
/// log P_word + log P_ngram, re-sorted and truncated to k.
inline Enumeration fuse_and_rank(const std::vector<PredictionRanking> & rankings, const NgramModel * ngram, size_t k,
                                 std::optional<size_t> depth_limit = std::nullopt, size_t pool_factor = kFusionPoolFactor) {
    if (!ngram) return enumerate_topk(rankings, k, depth_limit);
    require(pool_factor >= 1, "pool factor must be at least 1");
    for (const auto & e : rankings.empty() ? PredictionRanking{} : rankings.front()) {
        require(ngram->contains(e.label), "label '" + e.label + "' is outside the n-gram alphabet");
    }
    auto pool = enumerate_topk(rankings, k * pool_factor, depth_limit);
    for (auto & s : pool.sequences) s.log_score += ngram_log_prob(*ngram, s.symbols);
    std::stable_sort(pool.sequences.begin(), pool.sequences.end(), [](const ScoredSequence & a, const ScoredSequence & b) {
        if (a.log_score != b.log_score) return a.log_score > b.log_score;
        return a.symbols < b.symbols;
    });
    if (pool.sequences.size() > k) pool.sequences.resize(k);
    return pool;
}

// ---------------------------------------------------------------------------
// Dictionary attack

/// Scores every dictionary word of the right length by summed log confidence.
/// Words of another length or with symbols outside the alphabet are skipped
/// and reported in *warnings.
inline std::vector<ScoredSequence> dictionary_attack(const std::vector<PredictionRanking> & rankings, const std::vector<Symbols> & dictionary,
                                                     size_t k, std::vector<std::string> * warnings = nullptr) {
    require(k >= 1, "k must be at least 1");
    const auto lat = detail::build_lattice(rankings, std::nullopt);
    std::set<Symbols> seen;
    std::vector<ScoredSequence> scored;
    for (const auto & word : dictionary) {
        if (!seen.insert(word).second) continue;
        if (word.size() != rankings.size()) {
            if (warnings) warnings->push_back("skipped '" + join_symbols(word) + "': length " + std::to_string(word.size()));
            continue;
        }
        std::vector<size_t> ids;
        for (const auto & s : word) {
            auto it = std::lower_bound(lat.labels.begin(), lat.labels.end(), s);
            if (it == lat.labels.end() || *it != s) break;
            ids.push_back(size_t(it - lat.labels.begin()));
        }
        if (ids.size() != word.size()) {
            if (warnings) warnings->push_back("skipped '" + join_symbols(word) + "': symbol outside the classifier alphabet");
            continue;
        }
        scored.push_back({word, detail::path_score(lat, ids)});
    }
    std::stable_sort(scored.begin(), scored.end(), [](const ScoredSequence & a, const ScoredSequence & b) {
        if (a.log_score != b.log_score) return a.log_score > b.log_score;
        return a.symbols < b.symbols;
    });
    if (scored.size() > k) scored.resize(k);
    return scored;
}

inline std::vector<Symbols> parse_dictionary(std::istream & in) {
    std::vector<Symbols> words;
    std::string line;
    while (std::getline(in, line)) {
        detail::strip_cr(line);
        const auto b = line.find_first_not_of(" \t");
        if (b == std::string::npos) continue;
        const auto e = line.find_last_not_of(" \t");
        std::string w = line.substr(b, e - b + 1);
        for (char & ch : w) ch = char(std::tolower(static_cast<unsigned char>(ch)));
        words.push_back(symbols_of(w));
    }
    return words;
}

/// Per-letter feature vectors drawn (seeded, uniform) from recorded single
/// taps and classified, giving the ranking sequence for a synthetic word.
inline std::vector<PredictionRanking> synthesize_word_rankings(const std::map<std::string, std::vector<FeatureVector>> & pools,
                                                               const Symbols & word, const LdaModel & model, uint64_t seed) {
    Rng rng(seed);
    std::vector<PredictionRanking> out;
    for (const auto & letter : word) {
        auto it = pools.find(letter);
        if (it == pools.end() || it->second.empty()) fail(ErrorKind::Precondition, "no recorded taps for '" + letter + "'");
        out.push_back(predict(model, it->second[size_t(rng.below(it->second.size()))]));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Scoring attacks

struct AttackResult {
    std::vector<Symbols> targets;
    std::vector<std::optional<size_t>> rank_found;  // 1-based
    std::vector<double> recovery_curve;             // [m - 1] = fraction found within m attempts
};

inline AttackResult score_attack(const std::vector<std::vector<ScoredSequence>> & guess_lists, const std::vector<Symbols> & truths,
                                 size_t max_attempts) {
    require(guess_lists.size() == truths.size(), "one guess list per target");
    require(max_attempts >= 1, "max attempts must be at least 1");
    AttackResult r;
    r.targets = truths;
    for (size_t t = 0; t < truths.size(); ++t) {
        std::optional<size_t> rank;
        for (size_t i = 0; i < guess_lists[t].size(); ++i) {
            if (guess_lists[t][i].symbols == truths[t]) {
                rank = i + 1;
                break;
            }
        }
        r.rank_found.push_back(rank);
    }
    r.recovery_curve.assign(max_attempts, 0.0);
    if (truths.empty()) return r;
    for (size_t m = 1; m <= max_attempts; ++m) {
        size_t found = 0;
        for (const auto & rank : r.rank_found) found += rank && *rank <= m;
        r.recovery_curve[m - 1] = double(found) / double(truths.size());
    }
    return r;
}

inline void write_ranks_csv(std::ostream & out, const AttackResult & r) {
    out << "target,rank_found\n";
    for (size_t i = 0; i < r.targets.size(); ++i) {
        out << detail::csv_field(join_symbols(r.targets[i])) << ',';
        if (r.rank_found[i]) out << *r.rank_found[i];
        out << '\n';
    }
}

inline void write_recovery_csv(std::ostream & out, const AttackResult & r) {
    out << "m,recovery_fraction\n";
    char buf[32];
    for (size_t m = 1; m <= r.recovery_curve.size(); ++m) {
        std::snprintf(buf, sizeof buf, "%.10g", r.recovery_curve[m - 1]);
        out << m << ',' << buf << '\n';
    }
}

} // namespace tapsense
