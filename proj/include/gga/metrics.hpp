#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "gga/dataset.hpp"
#include "gga/loda.hpp"
#include "gga/nn.hpp"
#include "gga/saliency.hpp"

namespace gga {

/// Anomaly scores: lower means more trustworthy.
struct ScoredSet {
    std::vector<double> positives;  // trustworthy samples
    std::vector<double> negatives;  // OOD inputs and successful attacks
};

/// Percent of negatives flagged at the threshold accepting `tpr` of positives.
double tnr_at_tpr(const ScoredSet& s, double tpr = 0.95);
/// Mann-Whitney AUROC in percent: P(neg > pos) + P(neg == pos) / 2.
double auroc(const ScoredSet& s);

enum class PrSide { In, Out };
/// Step-interpolated area under the precision-recall curve in percent.
/// In: trustworthy samples are the positive class, ranked by negated score.
/// Out: untrustworthy samples are the positive class.
double aupr(const ScoredSet& s, PrSide side);
/// Average precision (fraction) of `scores` where higher means positive.
double average_precision(const std::vector<double>& scores, const std::vector<bool>& is_positive);

/// Negative maximum softmax probability.
double msp_score(const Model& model, const Tensor& x);

using SampleScorer = std::function<double(const Tensor&)>;

/// GGA pipeline scorer: CSM, features, LODA score.
SampleScorer gga_scorer(const Model& model, const LodaDetector& detector, const CsmOptions& opts = {});
SampleScorer msp_scorer(const Model& model);

struct ReportRow {
    std::string tag;
    std::size_t count = 0;
    double tnr = 0.0;
    double auroc = 0.0;
};

/// Column order of the summary table.
inline const std::vector<std::string> kReportColumns{"Noise", "PGD",     "Rotation", "boundary", "boundary-l2",
                                                     "OOD",   "AUROC",   "AUPR-In",  "AUPR-Out"};

struct DetectionReport {
    std::vector<ReportRow> rows;
    double auroc = 0.0;
    double aupr_in = 0.0;
    double aupr_out = 0.0;
    std::size_t positives = 0;
    std::size_t misclassified_clean = 0;
    std::vector<std::string> skipped;  // tags with no samples
    nlohmann::json metadata = nlohmann::json::object();

    const ReportRow* row(const std::string& tag) const;
    /// Table value for one of kReportColumns; NaN when no tag feeds it.
    /// Noise averages the "noise-*" tags and OOD the "ood*" tags; PGD,
    /// Rotation, boundary and boundary-l2 read the tags pgd, rotate,
    /// boundary and boundary-l2.
    double column(const std::string& name) const;

    nlohmann::json to_json() const;
    static DetectionReport from_json(const nlohmann::json& j);
    /// Header line plus one row in kReportColumns order (N/A when empty).
    std::string table_csv() const;
};

struct EvalOptions {
    double tpr = 0.95;
    bool per_source_auroc = false;  // average per-tag AUROC/AUPR instead of pooling
};

/// Metrics from precomputed scores.
DetectionReport evaluate_scores(const std::vector<double>& clean_scores,
                                const std::map<std::string, std::vector<double>>& untrustworthy,
                                const EvalOptions& opts = {});

/// Scores every set with `scorer`. Clean positives are restricted to
/// correctly classified samples; empty untrustworthy sets are skipped.
DetectionReport evaluate(const Model& model, const SampleScorer& scorer, const LabeledDataset& clean,
                         const std::map<std::string, LabeledDataset>& untrustworthy, const EvalOptions& opts = {});

std::vector<double> score_all(const SampleScorer& scorer, const std::vector<Tensor>& inputs);

}  // namespace gga
