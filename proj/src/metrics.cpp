#include "gga/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "gga/error.hpp"
#include "gga/features.hpp"
#include "gga/parallel.hpp"

namespace gga {
namespace {

void require_nonempty(const ScoredSet& s) {
    if (s.positives.empty() || s.negatives.empty())
        throw usage_error("metrics need non-empty positive and negative score lists");
}

}  // namespace

double tnr_at_tpr(const ScoredSet& s, double tpr) {
    require_nonempty(s);
    const double threshold = calibrate_threshold(s.positives, tpr);
    const auto flagged = std::count_if(s.negatives.begin(), s.negatives.end(), [&](double v) { return v > threshold; });
    return 100.0 * static_cast<double>(flagged) / static_cast<double>(s.negatives.size());
}

double auroc(const ScoredSet& s) {
    require_nonempty(s);
    // Midranks over the pooled list; U of the negatives counts wins plus half ties.
    struct Item {
        double score;
        bool negative;
    };
    std::vector<Item> all;
    all.reserve(s.positives.size() + s.negatives.size());
    for (double v : s.positives) all.push_back({v, false});
    for (double v : s.negatives) all.push_back({v, true});
    std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.score < b.score; });
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < all.size();) {
        std::size_t j = i;
        while (j < all.size() && all[j].score == all[i].score) ++j;
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k)
            if (all[k].negative) rank_sum += midrank;
        i = j;
    }
    const double nn = static_cast<double>(s.negatives.size()), np = static_cast<double>(s.positives.size());
    const double u = rank_sum - nn * (nn + 1.0) / 2.0;
    return 100.0 * u / (np * nn);
}

double average_precision(const std::vector<double>& scores, const std::vector<bool>& is_positive) {
    const auto total_pos = static_cast<double>(std::count(is_positive.begin(), is_positive.end(), true));
    if (total_pos == 0) throw usage_error("average precision needs at least one positive");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    double tp = 0, fp = 0, prev_recall = 0, ap = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            (is_positive[order[j]] ? tp : fp) += 1;
            ++j;
        }
        const double recall = tp / total_pos;
        ap += (recall - prev_recall) * (tp / (tp + fp));
        prev_recall = recall;
        i = j;
    }
    return ap;
}

double aupr(const ScoredSet& s, PrSide side) {
    require_nonempty(s);
    std::vector<double> scores;
    std::vector<bool> positive;
    const double sign = side == PrSide::In ? -1.0 : 1.0;
    for (double v : s.positives) {
        scores.push_back(sign * v);
        positive.push_back(side == PrSide::In);
    }
    for (double v : s.negatives) {
        scores.push_back(sign * v);
        positive.push_back(side == PrSide::Out);
    }
    return 100.0 * average_precision(scores, positive);
}

double msp_score(const Model& model, const Tensor& x) {
    const auto p = softmax(forward(model, x).values());
    return -*std::max_element(p.begin(), p.end());
}

SampleScorer gga_scorer(const Model& model, const LodaDetector& detector, const CsmOptions& opts) {
    return [&model, &detector, opts](const Tensor& x) { return detector.score(features(csm(model, x, opts))); };
}

SampleScorer msp_scorer(const Model& model) {
    return [&model](const Tensor& x) { return msp_score(model, x); };
}

std::vector<double> score_all(const SampleScorer& scorer, const std::vector<Tensor>& inputs) {
    std::vector<double> out(inputs.size());
    parallel_for(inputs.size(), [&](std::size_t i) { out[i] = scorer(inputs[i]); });
    return out;
}

const ReportRow* DetectionReport::row(const std::string& tag) const {
    for (const auto& r : rows)
        if (r.tag == tag) return &r;
    return nullptr;
}

double DetectionReport::column(const std::string& name) const {
    if (name == "AUROC") return auroc;
    if (name == "AUPR-In") return aupr_in;
    if (name == "AUPR-Out") return aupr_out;
    auto matches = [&](const std::string& tag) {
        if (name == "Noise") return tag.rfind("noise-", 0) == 0;
        if (name == "OOD") return tag.rfind("ood", 0) == 0;
        if (name == "PGD") return tag == "pgd";
        if (name == "Rotation") return tag == "rotate" || tag == "rotation";
        if (name == "boundary") return tag == "boundary";
        if (name == "boundary-l2") return tag == "boundary-l2";
        return false;
    };
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : rows)
        if (matches(r.tag)) {
            sum += r.tnr;
            ++n;
        }
    return n ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

nlohmann::json DetectionReport::to_json() const {
    nlohmann::json j;
    j["rows"] = nlohmann::json::array();
    for (const auto& r : rows) j["rows"].push_back({{"tag", r.tag}, {"count", r.count}, {"tnr", r.tnr}, {"auroc", r.auroc}});
    j["auroc"] = auroc;
    j["aupr_in"] = aupr_in;
    j["aupr_out"] = aupr_out;
    j["positives"] = positives;
    j["misclassified_clean"] = misclassified_clean;
    j["skipped"] = skipped;
    j["metadata"] = metadata;
    return j;
}

DetectionReport DetectionReport::from_json(const nlohmann::json& j) {
    DetectionReport r;
    for (const auto& row : j.at("rows"))
        r.rows.push_back({row.at("tag"), row.at("count"), row.at("tnr"), row.at("auroc")});
    r.auroc = j.at("auroc");
    r.aupr_in = j.at("aupr_in");
    r.aupr_out = j.at("aupr_out");
    r.positives = j.at("positives");
    r.misclassified_clean = j.at("misclassified_clean");
    r.skipped = j.at("skipped").get<std::vector<std::string>>();
    r.metadata = j.at("metadata");
    return r;
}

std::string DetectionReport::table_csv() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < kReportColumns.size(); ++i) os << (i ? "," : "") << kReportColumns[i];
    os << '\n';
    os.setf(std::ios::fixed);
    os.precision(1);
    for (std::size_t i = 0; i < kReportColumns.size(); ++i) {
        const double v = column(kReportColumns[i]);
        os << (i ? "," : "");
        if (std::isnan(v)) os << "N/A";
        else os << v;
    }
    os << '\n';
    return os.str();
}

DetectionReport evaluate_scores(const std::vector<double>& clean_scores,
                                const std::map<std::string, std::vector<double>>& untrustworthy,
                                const EvalOptions& opts) {
    if (clean_scores.empty()) throw data_error("no trustworthy (correctly classified clean) samples to evaluate");
    DetectionReport report;
    report.positives = clean_scores.size();
    ScoredSet pooled{clean_scores, {}};
    double auroc_sum = 0, in_sum = 0, out_sum = 0;
    for (const auto& [tag, scores] : untrustworthy) {
        if (scores.empty()) {
            report.skipped.push_back(tag);
            continue;
        }
        const ScoredSet s{clean_scores, scores};
        report.rows.push_back({tag, scores.size(), tnr_at_tpr(s, opts.tpr), auroc(s)});
        pooled.negatives.insert(pooled.negatives.end(), scores.begin(), scores.end());
        auroc_sum += report.rows.back().auroc;
        in_sum += aupr(s, PrSide::In);
        out_sum += aupr(s, PrSide::Out);
    }
    if (pooled.negatives.empty()) throw data_error("every untrustworthy set is empty");
    if (opts.per_source_auroc) {
        const double n = static_cast<double>(report.rows.size());
        report.auroc = auroc_sum / n;
        report.aupr_in = in_sum / n;
        report.aupr_out = out_sum / n;
    } else {
        report.auroc = auroc(pooled);
        report.aupr_in = aupr(pooled, PrSide::In);
        report.aupr_out = aupr(pooled, PrSide::Out);
    }
    report.metadata["tpr"] = opts.tpr;
    report.metadata["auroc_mode"] = opts.per_source_auroc ? "per-source" : "pooled";
    return report;
}

DetectionReport evaluate(const Model& model, const SampleScorer& scorer, const LabeledDataset& clean,
                         const std::map<std::string, LabeledDataset>& untrustworthy, const EvalOptions& opts) {
    std::vector<Tensor> trusted;
    std::size_t misclassified = 0;
    for (std::size_t i = 0; i < clean.size(); ++i) {
        if (clean.labels[i] >= 0 && predict(model, clean.inputs[i]) == static_cast<std::size_t>(clean.labels[i]))
            trusted.push_back(clean.inputs[i]);
        else
            ++misclassified;
    }
    std::map<std::string, std::vector<double>> neg;
    for (const auto& [tag, data] : untrustworthy) neg[tag] = score_all(scorer, data.inputs);
    DetectionReport r = evaluate_scores(score_all(scorer, trusted), neg, opts);
    r.misclassified_clean = misclassified;
    return r;
}

}  // namespace gga
