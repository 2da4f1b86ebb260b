#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "lsc/cv.hpp"
#include "lsc/dataio.hpp"
#include "lsc/features.hpp"
#include "lsc/gbm.hpp"
#include "lsc/metrics.hpp"

using namespace lsc;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string& work() {
    static const std::string dir = [] {
        fs::path p = fs::temp_directory_path() / "lsc_cli_work";
        fs::remove_all(p);
        fs::create_directories(p);
        return p.string();
    }();
    return dir;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    REQUIRE(out.good());
    out << text;
}

// runs the tool, captures both streams, returns the exit code
int run_tool(const std::string& args, std::string* out = nullptr, std::string* err = nullptr) {
    static int counter = 0;
    const std::string base = work() + "/cap" + std::to_string(counter++);
    const std::string cmd =
        std::string(LSC_CLI_BINARY) + " " + args + " >" + base + ".out 2>" + base + ".err";
    const int status = std::system(cmd.c_str());
    REQUIRE(status != -1);
    if (out) *out = slurp(base + ".out");
    if (err) *err = slurp(base + ".err");
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    return fields;
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

// synthetic dataset plus two 3-fold gbm runs shared across test cases
struct GbmRuns {
    std::string data, labels;
    std::string run_a, run_b;
    std::string data_bytes, labels_bytes;  // input snapshots
};

const GbmRuns& gbm_runs() {
    static const GbmRuns r = [] {
        GbmRuns g;
        const std::string d = work() + "/ds80";
        REQUIRE(run_tool("synth --n 80 --pos-ratio 0.3 --difficulty 0.4 --seed 9 --out " + d) ==
                0);
        g.data = d + "/data.npy";
        g.labels = d + "/labels.csv";
        g.data_bytes = slurp(g.data);
        g.labels_bytes = slurp(g.labels);
        g.run_a = work() + "/runA";
        g.run_b = work() + "/runB";
        const std::string common = " --data " + g.data + " --labels " + g.labels +
                                   " --rounds 30 --folds 3 --seed 4 --out ";
        REQUIRE(run_tool("train-gbm --preset boost-a" + common + g.run_a) == 0);
        REQUIRE(run_tool("train-gbm --preset boost-b" + common + g.run_b) == 0);
        return g;
    }();
    return r;
}

// a/b stems expected by the ensemble and report stages
struct EnsembleInputs {
    std::string a, b;
};

const EnsembleInputs& ensemble_inputs() {
    static const EnsembleInputs e = [] {
        const GbmRuns& g = gbm_runs();
        EnsembleInputs in{work() + "/a.csv", work() + "/b.csv"};
        fs::copy_file(g.run_a + "/oof.csv", in.a);
        fs::copy_file(g.run_b + "/oof.csv", in.b);
        return in;
    }();
    return e;
}

}  // namespace

TEST_CASE("usage and help") {
    std::string out, err;

    SUBCASE("top-level help lists every stage") {
        CHECK(run_tool("--help", &out, &err) == 0);
        for (const char* sub : {"synth", "features", "train-gbm", "train-nn", "predict",
                                "calibrate", "ensemble", "ablate", "report"})
            CHECK(out.find(sub) != std::string::npos);
    }

    SUBCASE("per-subcommand help documents the flags") {
        CHECK(run_tool("synth --help", &out) == 0);
        CHECK(out.find("--pos-ratio") != std::string::npos);
        CHECK(out.find("--difficulty") != std::string::npos);
        for (const char* sub : {"synth", "features", "train-gbm", "train-nn", "predict",
                                "calibrate", "ensemble", "ablate", "report"}) {
            CHECK(run_tool(std::string(sub) + " --help", &out) == 0);
            CHECK(out.find("--out") != std::string::npos);
            CHECK(out.find("--config") != std::string::npos);
        }
    }

    SUBCASE("bad invocations exit 1 with a diagnostic") {
        CHECK(run_tool("", &out, &err) == 1);
        CHECK(run_tool("frobnicate", &out, &err) == 1);
        CHECK(!err.empty());
        CHECK(run_tool("synth --bogus 3 --out " + work() + "/x", &out, &err) == 1);
        CHECK(!err.empty());
        CHECK(run_tool("synth", &out, &err) == 1);  // --out is required
    }
}

TEST_CASE("synth writes a labelled dataset") {
    const std::string d1 = work() + "/synth1";
    CHECK(run_tool("synth --n 100 --pos-ratio 0.175 --seed 42 --out " + d1) == 0);

    PatchStack stack = load_patch_stack(d1 + "/data.npy");
    LabelTable labels = load_labels(d1 + "/labels.csv");
    CHECK(stack.n == 100);
    CHECK(stack.h == 64);
    CHECK(stack.w == 64);
    CHECK(stack.c == 12);
    CHECK(labels.size() == 100);
    CHECK(labels.positives() == 18);  // 100 * 0.175 rounds half up
    CHECK(read_lines(d1 + "/labels.csv")[0] == "ID,label");

    SUBCASE("identical seeds write identical bytes") {
        const std::string d2 = work() + "/synth2";
        CHECK(run_tool("synth --n 100 --pos-ratio 0.175 --seed 42 --out " + d2) == 0);
        CHECK(slurp(d2 + "/data.npy") == slurp(d1 + "/data.npy"));
        CHECK(slurp(d2 + "/labels.csv") == slurp(d1 + "/labels.csv"));
    }

    SUBCASE("different seed changes the data") {
        const std::string d3 = work() + "/synth3";
        CHECK(run_tool("synth --n 100 --pos-ratio 0.175 --seed 43 --out " + d3) == 0);
        CHECK(slurp(d3 + "/data.npy") != slurp(d1 + "/data.npy"));
    }
}

TEST_CASE("features emits the statistics table") {
    const std::string d = work() + "/feat_ds";
    REQUIRE(run_tool("synth --n 40 --seed 3 --out " + d) == 0);
    const std::string base =
        "features --data " + d + "/data.npy --labels " + d + "/labels.csv ";

    SUBCASE("with indices the table has 126 columns") {
        const std::string out_csv = work() + "/features126.csv";
        CHECK(run_tool(base + "--indices --scaler robust --out " + out_csv) == 0);
        std::vector<std::string> lines = read_lines(out_csv);
        REQUIRE(lines.size() == 41);  // header + one row per patch
        std::vector<std::string> header = split_csv_line(lines[0]);
        CHECK(header.size() == 127);  // ID + 18 channels x 7 statistics
        CHECK(header[0] == "ID");
        CHECK(split_csv_line(lines[1]).size() == 127);

        // byte-identical rerun
        const std::string out2 = work() + "/features126b.csv";
        CHECK(run_tool(base + "--indices --scaler robust --out " + out2) == 0);
        CHECK(slurp(out2) == slurp(out_csv));
    }

    SUBCASE("without indices the table has 84 columns") {
        const std::string out_csv = work() + "/features84.csv";
        CHECK(run_tool(base + "--no-indices --out " + out_csv) == 0);
        CHECK(split_csv_line(read_lines(out_csv)[0]).size() == 85);
    }

    SUBCASE("bad scaler name") {
        std::string err;
        CHECK(run_tool(base + "--scaler median --out " + work() + "/x.csv", nullptr, &err) ==
              1);
        CHECK(err.find("scaler") != std::string::npos);
    }

    SUBCASE("missing data file") {
        CHECK(run_tool("features --data " + work() + "/absent.npy --out " + work() + "/x.csv") ==
              2);
    }
}

TEST_CASE("train-gbm cross-validates and saves artifacts") {
    const GbmRuns& g = gbm_runs();

    SUBCASE("artifacts land in the output directory") {
        for (const char* f : {"/oof.csv", "/run.json", "/model_fold0.json", "/model_fold1.json",
                              "/model_fold2.json"})
            CHECK(fs::exists(g.run_a + f));

        OofFile oof = load_oof_csv(g.run_a + "/oof.csv");
        CHECK(oof.ids.size() == 80);
        json record = json::parse(slurp(g.run_a + "/run.json"));
        CHECK(record["spec"]["kind"] == "gbm");
        CHECK(record["spec"]["name"] == "boost-a");
        CHECK(record["spec"]["gbm"]["n_rounds"] == 30);
        CHECK(record["folds"]["k"] == 3);
        CHECK(record["pooled"]["auc"].get<double>() > 0.5);
    }

    SUBCASE("inputs are never mutated") {
        CHECK(slurp(g.data) == g.data_bytes);
        CHECK(slurp(g.labels) == g.labels_bytes);
    }

    SUBCASE("reruns are byte-identical") {
        const std::string rerun = work() + "/runA2";
        CHECK(run_tool("train-gbm --preset boost-a --data " + g.data + " --labels " + g.labels +
                       " --rounds 30 --folds 3 --seed 4 --out " + rerun) == 0);
        for (const char* f : {"/oof.csv", "/run.json", "/model_fold0.json"})
            CHECK(slurp(rerun + f) == slurp(g.run_a + f));
    }

    SUBCASE("scaling is refused for trees") {
        std::string err;
        CHECK(run_tool("train-gbm --data " + g.data + " --labels " + g.labels +
                           " --scaler robust --out " + work() + "/x",
                       nullptr, &err) == 1);
        CHECK(err.find("none") != std::string::npos);
    }

    SUBCASE("unknown preset") {
        CHECK(run_tool("train-gbm --data " + g.data + " --labels " + g.labels +
                       " --preset boost-z --out " + work() + "/x") == 1);
    }

    SUBCASE("missing data is a runtime error") {
        CHECK(run_tool("train-gbm --data " + work() + "/absent.npy --labels " + g.labels +
                       " --out " + work() + "/x") == 2);
    }
}

TEST_CASE("train-nn cross-validates with a small config") {
    static const std::string ds = [] {
        const std::string d = work() + "/nn_ds";
        REQUIRE(run_tool("synth --n 24 --pos-ratio 0.3 --difficulty 0.3 --seed 15 --out " + d) ==
                0);
        return d;
    }();
    static const std::string cfg_path = [] {
        json cfg{{"fusion",
                  {{"encoders", json::array({{{"group", "RGBN"},
                                              {"image_size", 64},
                                              {"token_patch", 8},
                                              {"embed_dim", 8},
                                              {"depth", 1},
                                              {"heads", 2},
                                              {"mlp_ratio", 2},
                                              {"out_features", 8}}})},
                   {"head_width", 8},
                   {"dropout_rate", 0.0}}},
                 {"train", {{"epochs", 1}, {"batch_size", 16}}}};
        const std::string path = work() + "/nn_cfg.json";
        spit(path, cfg.dump(2) + "\n");
        return path;
    }();
    static const std::string run_dir = [] {
        const std::string out = work() + "/nn_run";
        REQUIRE(run_tool("train-nn --data " + ds + "/data.npy --labels " + ds +
                         "/labels.csv --folds 2 --seed 5 --no-tta --config " + cfg_path +
                         " --out " + out) == 0);
        return out;
    }();

    SUBCASE("artifacts land in the output directory") {
        for (const char* f :
             {"/oof.csv", "/run.json", "/model_fold0.json", "/model_fold0.bin",
              "/model_fold1.json", "/model_fold1.bin"})
            CHECK(fs::exists(run_dir + f));
        json record = json::parse(slurp(run_dir + "/run.json"));
        CHECK(record["spec"]["kind"] == "nn");
        CHECK(record["spec"]["fusion"]["encoders"].size() == 1);
        CHECK(record["spec"]["train"]["epochs"] == 1);
        OofFile oof = load_oof_csv(run_dir + "/oof.csv");
        CHECK(oof.ids.size() == 24);
        for (double p : oof.probabilities) {
            CHECK(p >= 0.0);
            CHECK(p <= 1.0);
        }
    }

    SUBCASE("reruns are byte-identical") {
        const std::string rerun = work() + "/nn_run2";
        CHECK(run_tool("train-nn --data " + ds + "/data.npy --labels " + ds +
                       "/labels.csv --folds 2 --seed 5 --no-tta --config " + cfg_path +
                       " --out " + rerun) == 0);
        for (const char* f : {"/oof.csv", "/model_fold0.json", "/model_fold0.bin"})
            CHECK(slurp(rerun + f) == slurp(run_dir + f));
    }

    SUBCASE("saved fold nets drive predict") {
        const std::string preds = work() + "/nn_preds.csv";
        CHECK(run_tool("predict " + run_dir + "/model_fold0 --data " + ds +
                       "/data.npy --labels " + ds + "/labels.csv --no-tta --out " + preds) ==
              0);
        std::vector<std::string> lines = read_lines(preds);
        REQUIRE(lines.size() == 25);
        CHECK(lines[0] == "ID,probability,label");

        const std::string again = work() + "/nn_preds2.csv";
        CHECK(run_tool("predict " + run_dir + "/model_fold0 --data " + ds +
                       "/data.npy --labels " + ds + "/labels.csv --no-tta --out " + again) ==
              0);
        CHECK(slurp(again) == slurp(preds));
    }
}

TEST_CASE("predict applies a saved gbm model") {
    const GbmRuns& g = gbm_runs();
    const std::string model = g.run_a + "/model_fold0.json";

    SUBCASE("probabilities match the in-process model") {
        const std::string preds = work() + "/gbm_preds.csv";
        CHECK(run_tool("predict " + model + " --data " + g.data + " --labels " + g.labels +
                       " --threshold 0.3 --out " + preds) == 0);

        std::vector<std::string> lines = read_lines(preds);
        REQUIRE(lines.size() == 81);
        CHECK(lines[0] == "ID,probability,label");

        // oracle: the model was trained on the index-enriched statistics
        GbmModel m = load_gbm_model(model);
        PatchStack stack = compute_indices(load_patch_stack(g.data));
        LabelTable labels = load_labels(g.labels);
        FeatureTable table = compute_patch_statistics(stack, &labels.ids);
        std::vector<double> expected = predict_gbm(m, table);

        for (std::size_t i = 0; i < expected.size(); ++i) {
            std::vector<std::string> f = split_csv_line(lines[i + 1]);
            REQUIRE(f.size() == 3);
            CHECK(f[0] == labels.ids[i]);
            CHECK(std::stod(f[1]) == expected[i]);  // %.17g round-trips exactly
            CHECK(f[2] == (expected[i] >= 0.3 ? "1" : "0"));
        }
    }

    SUBCASE("model file errors") {
        CHECK(run_tool("predict " + work() + "/absent.json --data " + g.data + " --out " +
                       work() + "/x.csv") == 2);
        const std::string junk = work() + "/junk_model.json";
        spit(junk, "{\"format\": \"mystery\"}\n");
        CHECK(run_tool("predict " + junk + " --data " + g.data + " --out " + work() +
                       "/x.csv") == 1);
    }
}

TEST_CASE("calibrate picks the best threshold") {
    SUBCASE("threshold and sweep match the library") {
        const std::string oof_path = work() + "/cal_oof.csv";
        save_oof_csv({"a", "b", "c", "d", "e", "f"}, {0, 0, 1, 1, 0, 1},
                     {0.1, 0.4, 0.35, 0.8, 0.2, 0.7}, {0, 1, 0, 1, 0, 1}, oof_path);
        const std::string out = work() + "/cal_out";
        CHECK(run_tool("calibrate --oof " + oof_path + " --out " + out) == 0);

        CalibrationResult expected =
            calibrate_threshold({0, 1, 0, 1, 0, 1}, {0.1, 0.4, 0.35, 0.8, 0.2, 0.7});
        json doc = json::parse(slurp(out + "/calibration.json"));
        CHECK(doc["threshold"].get<double>() == expected.threshold);
        CHECK(doc["f1"].get<double>() == expected.f1);

        std::vector<std::string> sweep = read_lines(out + "/sweep.csv");
        CHECK(sweep[0] == "threshold,f1");
        CHECK(sweep.size() == expected.sweep.size() + 1);
    }

    SUBCASE("single-class input names the precondition") {
        const std::string oof_path = work() + "/cal_single.csv";
        save_oof_csv({"a", "b", "c"}, {0, 1, 0}, {0.2, 0.6, 0.8}, {1, 1, 1}, oof_path);
        std::string err;
        CHECK(run_tool("calibrate --oof " + oof_path + " --out " + work() + "/cal_bad", nullptr,
                       &err) == 1);
        CHECK(err.find("both classes") != std::string::npos);
    }
}

TEST_CASE("ensemble blends oof files") {
    const EnsembleInputs& in = ensemble_inputs();
    const std::string out = work() + "/ens_out";
    CHECK(run_tool("ensemble " + in.a + " " + in.b + " --out " + out) == 0);

    SUBCASE("outputs agree with the library blend") {
        OofFile a = load_oof_csv(in.a);
        OofFile b = load_oof_csv(in.b);
        std::vector<double> mean = ensemble_average({a.probabilities, b.probabilities});

        OofFile blended = load_oof_csv(out + "/ensemble_oof.csv");
        CHECK(blended.ids == a.ids);
        REQUIRE(blended.probabilities.size() == mean.size());
        for (std::size_t i = 0; i < mean.size(); ++i)
            CHECK(blended.probabilities[i] == mean[i]);

        json cal = json::parse(slurp(out + "/calibration.json"));
        CHECK(cal["members"] == json::array({"a", "b"}));
        CalibrationResult expected = calibrate_threshold(a.labels, mean);
        CHECK(cal["threshold"].get<double>() == expected.threshold);
        CHECK(cal["f1"].get<double>() == expected.f1);

        std::vector<std::string> preds = read_lines(out + "/predictions.csv");
        CHECK(preds[0] == "ID,probability,label");
        CHECK(preds.size() == a.ids.size() + 1);
    }

    SUBCASE("inconsistent inputs are rejected") {
        CHECK(run_tool("ensemble " + in.a + " " + in.a + " --out " + work() + "/x") == 1);

        OofFile a = load_oof_csv(in.a);
        std::vector<std::string> other_ids = a.ids;
        other_ids[0] = "stranger";
        const std::string c_path = work() + "/c.csv";
        save_oof_csv(other_ids, a.fold_of, a.probabilities, a.labels, c_path);
        CHECK(run_tool("ensemble " + in.a + " " + c_path + " --out " + work() + "/x") == 1);
    }
}

TEST_CASE("report emits plot-ready files") {
    const GbmRuns& g = gbm_runs();
    const EnsembleInputs& in = ensemble_inputs();
    const std::string model = g.run_a + "/model_fold0.json";

    SUBCASE("full report with importance and leaderboard numbers") {
        const std::string out = work() + "/rep_full";
        CHECK(run_tool("report " + in.a + " " + in.b + " --model " + model +
                       " --top-k 5 --public-lb 0.8792 --private-lb 0.8408 --out " + out) == 0);

        // one curve per member plus the ensemble
        std::set<std::string> curves;
        std::vector<std::string> roc = read_lines(out + "/roc.csv");
        CHECK(roc[0] == "model,fpr,tpr,threshold");
        for (std::size_t i = 1; i < roc.size(); ++i) curves.insert(split_csv_line(roc[i])[0]);
        CHECK(curves == std::set<std::string>{"a", "b", "ensemble"});

        CHECK(read_lines(out + "/sweep.csv")[0] == "threshold,f1");

        json confusion = json::parse(slurp(out + "/confusion.json"));
        CHECK(confusion["tn"].get<int>() + confusion["fp"].get<int>() +
                  confusion["fn"].get<int>() + confusion["tp"].get<int>() ==
              80);

        std::vector<std::string> imp = read_lines(out + "/importance.csv");
        CHECK(imp[0] == "feature,gain,splits");
        CHECK(imp.size() == 6);  // top 5 requested
        double prev = std::numeric_limits<double>::infinity();
        for (std::size_t i = 1; i < imp.size(); ++i) {
            const double gain = std::stod(split_csv_line(imp[i])[1]);
            CHECK(gain <= prev);
            prev = gain;
        }

        json summary = json::parse(slurp(out + "/summary.json"));
        REQUIRE(summary["models"].size() == 2);
        CHECK(summary["models"][0]["name"] == "a");
        CHECK(summary["ensemble"]["auc"].get<double>() > 0.5);
        REQUIRE(summary.contains("overall"));
        CHECK(summary["overall"]["public"].get<double>() == 0.8792);
        CHECK(summary["overall"]["private"].get<double>() == 0.8408);
        const double oof_f1 = summary["overall"]["oof"].get<double>();
        CHECK(summary["overall"]["score"].get<double>() ==
              overall_score(oof_f1, 0.8792, 0.8408).overall);
    }

    SUBCASE("importance defaults to the top 30 of the 126 features") {
        const std::string out = work() + "/rep_top30";
        CHECK(run_tool("report " + in.a + " --model " + model + " --out " + out) == 0);
        CHECK(read_lines(out + "/importance.csv").size() == 31);
    }

    SUBCASE("optional pieces stay optional") {
        const std::string out = work() + "/rep_bare";
        CHECK(run_tool("report " + in.a + " " + in.b + " --out " + out) == 0);
        CHECK(!fs::exists(out + "/importance.csv"));
        json summary = json::parse(slurp(out + "/summary.json"));
        CHECK(!summary.contains("overall"));
    }

    SUBCASE("leaderboard flags come as a pair") {
        CHECK(run_tool("report " + in.a + " --public-lb 0.8 --out " + work() + "/x") == 1);
    }

    SUBCASE("missing oof file is a runtime error") {
        CHECK(run_tool("report " + work() + "/absent.csv --out " + work() + "/x") == 2);
    }
}

TEST_CASE("ablate compares baseline and variant") {
    static const std::string ds = [] {
        const std::string d = work() + "/ab_ds";
        REQUIRE(run_tool("synth --n 60 --pos-ratio 0.3 --difficulty 0.4 --seed 21 --out " + d) ==
                0);
        return d;
    }();
    const std::string base_args = "ablate --data " + ds + "/data.npy --labels " + ds +
                                  "/labels.csv --rounds 20 --folds 3 --seed 2 --out ";

    SUBCASE("modality drop writes both runs") {
        const std::string out = work() + "/ab_mod";
        std::string err;
        CHECK(run_tool(base_args + out + " --drop-modality SAR,SARdiff", nullptr, &err) == 0);
        json doc = json::parse(slurp(out + "/ablation.json"));
        CHECK(doc["description"] == "drop-modality:SAR,SARdiff");
        CHECK(doc["baseline_f1"].get<double>() >= 0.0);
        CHECK(doc["ablated_f1"].get<double>() >= 0.0);
        OofFile baseline = load_oof_csv(out + "/baseline_oof.csv");
        OofFile ablated = load_oof_csv(out + "/ablated_oof.csv");
        CHECK(baseline.ids.size() == 60);
        CHECK(ablated.ids.size() == 60);
        CHECK(baseline.probabilities != ablated.probabilities);
    }

    SUBCASE("no drop flag reruns the baseline") {
        const std::string out = work() + "/ab_none";
        CHECK(run_tool(base_args + out) == 0);
        json doc = json::parse(slurp(out + "/ablation.json"));
        CHECK(doc["description"] == "none");
        CHECK(slurp(out + "/baseline_oof.csv") == slurp(out + "/ablated_oof.csv"));
    }

    SUBCASE("drop flags are mutually exclusive") {
        std::string err;
        CHECK(run_tool(base_args + work() + "/x --drop-stat std --drop-index NDVI", nullptr,
                       &err) == 1);
        CHECK(err.find("at most one") != std::string::npos);
    }

    SUBCASE("unknown names are rejected") {
        CHECK(run_tool(base_args + work() + "/x --drop-stat variance") == 1);
        CHECK(run_tool(base_args + work() + "/x --drop-modality Thermal") == 1);
    }
}

TEST_CASE("config files merge under flags") {
    SUBCASE("config fills unspecified values") {
        const std::string cfg = work() + "/synth_cfg.json";
        spit(cfg, "{\"n\": 30, \"pos_ratio\": 0.3, \"seed\": 7}\n");
        const std::string out = work() + "/cfg_synth";
        CHECK(run_tool("synth --config " + cfg + " --out " + out) == 0);
        LabelTable t = load_labels(out + "/labels.csv");
        CHECK(t.size() == 30);
        CHECK(t.positives() == 9);
    }

    SUBCASE("explicit flags beat config values") {
        const std::string cfg = work() + "/synth_cfg2.json";
        spit(cfg, "{\"n\": 30}\n");
        const std::string out = work() + "/cfg_flags_win";
        CHECK(run_tool("synth --n 50 --config " + cfg + " --out " + out) == 0);
        CHECK(load_labels(out + "/labels.csv").size() == 50);
    }

    SUBCASE("unknown keys are rejected") {
        const std::string cfg = work() + "/bad_key.json";
        spit(cfg, "{\"count\": 5}\n");
        std::string err;
        CHECK(run_tool("synth --config " + cfg + " --out " + work() + "/x", nullptr, &err) ==
              1);
        CHECK(err.find("unknown config key") != std::string::npos);
    }

    SUBCASE("wrong value types are rejected") {
        const std::string cfg = work() + "/bad_type.json";
        spit(cfg, "{\"n\": \"many\"}\n");
        CHECK(run_tool("synth --config " + cfg + " --out " + work() + "/x") == 1);
    }

    SUBCASE("invalid json is rejected") {
        const std::string cfg = work() + "/bad_json.json";
        spit(cfg, "{\"n\": \n");
        CHECK(run_tool("synth --config " + cfg + " --out " + work() + "/x") == 1);
    }

    SUBCASE("nested gbm settings reach the model") {
        const GbmRuns& g = gbm_runs();
        const std::string cfg = work() + "/gbm_cfg.json";
        spit(cfg, "{\"gbm\": {\"n_rounds\": 5, \"num_leaves\": 4}, \"folds\": 3}\n");
        const std::string out = work() + "/cfg_gbm";
        CHECK(run_tool("train-gbm --data " + g.data + " --labels " + g.labels + " --config " +
                       cfg + " --out " + out) == 0);
        json record = json::parse(slurp(out + "/run.json"));
        CHECK(record["spec"]["gbm"]["n_rounds"] == 5);
        CHECK(record["spec"]["gbm"]["num_leaves"] == 4);
        CHECK(record["folds"]["k"] == 3);

        // an explicit --rounds wins over the nested value
        const std::string out2 = work() + "/cfg_gbm2";
        CHECK(run_tool("train-gbm --data " + g.data + " --labels " + g.labels + " --config " +
                       cfg + " --rounds 8 --out " + out2) == 0);
        json record2 = json::parse(slurp(out2 + "/run.json"));
        CHECK(record2["spec"]["gbm"]["n_rounds"] == 8);
    }
}
