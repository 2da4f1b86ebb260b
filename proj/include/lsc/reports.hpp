#ifndef LSC_REPORTS_HPP
#define LSC_REPORTS_HPP

#include <string>

#include "lsc/cv.hpp"
#include "lsc/gbm.hpp"

namespace lsc {

struct ReportOptions {
    int top_k = 30;          // importance rows kept, sorted by gain
    bool has_leaderboard = false;
    double public_lb = 0.0;  // used only when has_leaderboard
    double private_lb = 0.0;
};

// Writes roc.csv, sweep.csv, confusion.json and summary.json into out_dir;
// importance.csv too when a fitted model is supplied. The bundle must carry
// an ensemble (run_ensemble over a single member is fine).
void emit_report(const OofBundle& bundle, const GbmModel* importance_model,
                 const std::string& out_dir, const ReportOptions& opts = {});

void write_importance_csv(const GbmModel& model, const std::string& path, int top_k = 30);

}  // namespace lsc

#endif
