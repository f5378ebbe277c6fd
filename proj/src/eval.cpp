#include "patchnet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <thread>

#include "patchnet/patch_engine.hpp"
#include "patchnet/rng.hpp"

namespace patchnet {

std::string saliency_method_name(SaliencyMethod m) {
    switch (m) {
        case SaliencyMethod::patch_raw: return "patch_raw";
        case SaliencyMethod::patch_scaled: return "patch_scaled";
        case SaliencyMethod::gradcam: return "gradcam";
    }
    return "patch_raw";
}

SaliencyMethod saliency_method_from_name(const std::string& name) {
    if (name == "patch_raw") return SaliencyMethod::patch_raw;
    if (name == "patch_scaled") return SaliencyMethod::patch_scaled;
    if (name == "gradcam") return SaliencyMethod::gradcam;
    throw ConfigError("unknown saliency method '" + name +
                      "' (expected patch_raw|patch_scaled|gradcam)");
}

namespace {

// Runs fn(i) for i in [0,n) over `threads` workers; results must be written
// to disjoint slots so the outcome is identical for any thread count.
void parallel_for(size_t n, int threads, const std::function<void(size_t)>& fn) {
    threads = std::max(1, threads);
    if (threads == 1 || n <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (int w = 0; w < threads; ++w) {
        pool.emplace_back([&, w]() {
            try {
                for (size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

struct SampleEval {
    std::vector<double> scores;      // yhat per class
    std::vector<SaliencyMap> maps;   // one per class
};

// Scores + per-class saliency maps for every sample of one split.
std::vector<SampleEval> eval_split(const std::vector<const Sample*>& samples,
                                   const Backbone& model, const PatchGridSpec& grid,
                                   const EvalOptions& options, int shift_offset) {
    const size_t C = model.config().num_classes;
    std::vector<SampleEval> out(samples.size());
    // Each worker gets its own deep copy: Grad-CAM's backward sweep
    // accumulates into parameter grad buffers, which must not be shared.
    const int threads = std::max(1, options.threads);
    std::vector<Backbone> models;
    models.reserve(threads);
    for (int w = 0; w < threads; ++w) models.push_back(model.clone());
    std::atomic<int> next_worker{0};

    thread_local int worker_slot = -1;
    parallel_for(samples.size(), threads, [&](size_t i) {
        if (worker_slot < 0) worker_slot = next_worker.fetch_add(1) % threads;
        const Backbone& m = models[worker_slot];
        const Sample& s = *samples[i];
        Tensor image = image_to_tensor(s.image);
        PatchLogitGrid pgrid = predict(image, m, grid);
        SampleEval& se = out[i];
        se.scores = pgrid.probabilities;
        se.maps.reserve(C);
        for (size_t c = 0; c < C; ++c) {
            if (options.method == SaliencyMethod::gradcam) {
                se.maps.push_back(gradcam(image, m, static_cast<int>(c)));
            } else {
                const bool scaled = options.method == SaliencyMethod::patch_scaled;
                if (shift_offset == grid.patch_side) {
                    se.maps.push_back(patch_saliency(pgrid, static_cast<int>(c), scaled));
                } else {
                    se.maps.push_back(shifted_saliency(image, m, grid, ShiftSpec(shift_offset),
                                                       static_cast<int>(c), scaled));
                }
            }
        }
    });
    return out;
}

std::optional<MetricWithCi> with_mean_ci(const std::vector<double>& values,
                                         const EvalOptions& options, uint64_t stream) {
    if (values.empty()) return std::nullopt;
    MetricWithCi m;
    double s = 0.0;
    for (double v : values) s += v;
    m.point = s / values.size();
    if (options.bootstrap_resamples > 0) {
        m.ci = bootstrap_mean_ci(values, options.bootstrap_resamples, options.ci_level,
                                 Rng::key(options.seed, {stream}));
    }
    return m;
}

std::optional<double> mean_of(const std::vector<double>& values) {
    if (values.empty()) return std::nullopt;
    double s = 0.0;
    for (double v : values) s += v;
    return s / values.size();
}

}  // namespace

EvalReport evaluate(const Dataset& dataset, const Backbone& model, const PatchGridSpec& grid,
                    const EvalOptions& options) {
    const size_t C = model.config().num_classes;
    if (dataset.class_names.size() != C) {
        throw ConfigError("evaluate: dataset has " + std::to_string(dataset.class_names.size()) +
                          " classes, model expects " + std::to_string(C));
    }
    if (options.method == SaliencyMethod::gradcam && grid.patches_per_side != 1) {
        throw ConfigError("evaluate: gradcam requires the P=1 configuration, got P=" +
                          std::to_string(grid.patches_per_side));
    }
    int shift_offset = options.shift_offset > 0 ? options.shift_offset : grid.patch_side;
    if (options.method != SaliencyMethod::gradcam) {
        ShiftSpec(shift_offset).validate(grid.patch_side);
    }

    std::vector<const Sample*> valid_samples;
    std::vector<const Sample*> test_samples;
    for (const Sample& s : dataset.samples) {
        if (s.split == Split::valid) valid_samples.push_back(&s);
        if (s.split == Split::test) test_samples.push_back(&s);
    }
    if (valid_samples.empty()) throw Error("evaluate: no validation samples in dataset");
    if (test_samples.empty()) throw Error("evaluate: no test samples in dataset");

    const std::vector<SampleEval> valid_eval =
        eval_split(valid_samples, model, grid, options, shift_offset);
    const std::vector<SampleEval> test_eval =
        eval_split(test_samples, model, grid, options, shift_offset);

    auto gt_present = [](const Sample& s, size_t c) {
        return c < s.masks.size() && s.masks[c].present() && s.masks[c].any();
    };

    // Classification thresholds per class, fitted on validation.
    std::vector<double> thresholds(C, std::numeric_limits<double>::infinity());
    for (size_t c = 0; c < C; ++c) {
        std::vector<double> scores;
        std::vector<uint8_t> labels;
        for (size_t i = 0; i < valid_samples.size(); ++i) {
            scores.push_back(valid_eval[i].scores[c]);
            labels.push_back(valid_samples[i]->labels[c]);
        }
        try {
            thresholds[c] = optimal_threshold(scores, labels);
        } catch (const Error&) {
            // single-class validation data: keep the all-negative sentinel
        }
    }

    // One global segmentation threshold, fitted on validation cases.
    std::vector<SegThresholdCase> seg_cases;
    for (size_t i = 0; i < valid_samples.size(); ++i) {
        for (size_t c = 0; c < C; ++c) {
            SegThresholdCase sc;
            sc.map = valid_eval[i].maps[c];
            sc.predicted_positive = valid_eval[i].scores[c] >= thresholds[c];
            sc.gt_present = gt_present(*valid_samples[i], c);
            if (sc.gt_present) sc.gt_mask = valid_samples[i]->masks[c];
            else sc.gt_mask = Mask::zeros(dataset.image_side);
            sc.sample_id = valid_samples[i]->id;
            sc.class_id = static_cast<int>(c);
            seg_cases.push_back(std::move(sc));
        }
    }
    const double seg_threshold = saliency_threshold_search(seg_cases);

    EvalReport report;
    report.method = saliency_method_name(options.method);
    report.shift_offset = options.method == SaliencyMethod::gradcam ? 0 : shift_offset;
    report.bootstrap_resamples = options.bootstrap_resamples;
    report.seed = options.seed;
    report.seg_threshold = seg_threshold;

    std::vector<double> means_auroc, means_sens, means_spec, means_acc;
    std::vector<double> means_hit, means_miou_all, means_miou_tp;

    for (size_t c = 0; c < C; ++c) {
        ClassEvalReport cls;
        cls.name = dataset.class_names[c];
        cls.threshold = thresholds[c];
        cls.n_test = static_cast<int>(test_samples.size());

        std::vector<double> scores;
        std::vector<uint8_t> labels;
        for (size_t i = 0; i < test_samples.size(); ++i) {
            scores.push_back(test_eval[i].scores[c]);
            labels.push_back(test_samples[i]->labels[c]);
        }
        const uint64_t base_stream = 0x1000 * (c + 1);
        try {
            MetricWithCi m;
            m.point = auroc(scores, labels);
            if (options.bootstrap_resamples > 0) {
                m.ci = bootstrap_ci(
                    scores.size(),
                    [&](std::span<const size_t> idx) {
                        std::vector<double> ss;
                        std::vector<uint8_t> ll;
                        ss.reserve(idx.size());
                        ll.reserve(idx.size());
                        for (size_t i : idx) {
                            ss.push_back(scores[i]);
                            ll.push_back(labels[i]);
                        }
                        return auroc(ss, ll);
                    },
                    options.bootstrap_resamples, options.ci_level,
                    Rng::key(options.seed, {base_stream + 1}));
            }
            cls.auroc = m;
            means_auroc.push_back(m.point);
        } catch (const Error&) {
        }
        try {
            const ConfusionRates rates = rates_at_threshold(scores, labels, thresholds[c]);
            auto rate_ci = [&](double point, uint64_t stream,
                               auto pick) -> std::optional<MetricWithCi> {
                MetricWithCi m;
                m.point = point;
                if (options.bootstrap_resamples > 0) {
                    m.ci = bootstrap_ci(
                        scores.size(),
                        [&](std::span<const size_t> idx) {
                            std::vector<double> ss;
                            std::vector<uint8_t> ll;
                            for (size_t i : idx) {
                                ss.push_back(scores[i]);
                                ll.push_back(labels[i]);
                            }
                            return pick(rates_at_threshold(ss, ll, thresholds[c]));
                        },
                        options.bootstrap_resamples, options.ci_level,
                        Rng::key(options.seed, {stream}));
                }
                return m;
            };
            cls.sensitivity = rate_ci(rates.sensitivity, base_stream + 2,
                                      [](const ConfusionRates& r) { return r.sensitivity; });
            cls.specificity = rate_ci(rates.specificity, base_stream + 3,
                                      [](const ConfusionRates& r) { return r.specificity; });
            cls.accuracy = rate_ci(rates.accuracy, base_stream + 4,
                                   [](const ConfusionRates& r) { return r.accuracy; });
            means_sens.push_back(rates.sensitivity);
            means_spec.push_back(rates.specificity);
            means_acc.push_back(rates.accuracy);
        } catch (const Error&) {
        }

        // Hit rate over every test case with a non-empty ground-truth mask,
        // independent of the classification outcome.
        std::vector<double> hits;
        for (size_t i = 0; i < test_samples.size(); ++i) {
            const Sample& s = *test_samples[i];
            if (!gt_present(s, c)) continue;
            const auto [row, col] = most_salient_point(test_eval[i].maps[c]);
            hits.push_back(s.masks[c].at(row, col) != 0 ? 1.0 : 0.0);
        }
        cls.n_hit_cases = static_cast<int>(hits.size());
        cls.hit_rate = with_mean_ci(hits, options, base_stream + 5);
        if (cls.hit_rate) means_hit.push_back(cls.hit_rate->point);

        // mIoU over TP/FP/FN cases with the global segmentation threshold.
        std::vector<LocalizationCase> loc_cases;
        for (size_t i = 0; i < test_samples.size(); ++i) {
            const Sample& s = *test_samples[i];
            LocalizationCase lc;
            lc.sample_id = s.id;
            lc.class_id = static_cast<int>(c);
            lc.gt_present = gt_present(s, c);
            lc.predicted_positive = test_eval[i].scores[c] >= thresholds[c];
            lc.gt_mask = lc.gt_present ? s.masks[c] : Mask::zeros(dataset.image_side);
            if (lc.predicted_positive) {
                lc.pred_mask = threshold_to_mask(test_eval[i].maps[c], seg_threshold);
            }
            loc_cases.push_back(std::move(lc));
        }
        const std::vector<double> ious_all = case_ious(loc_cases, /*tp_only=*/false);
        const std::vector<double> ious_tp = case_ious(loc_cases, /*tp_only=*/true);
        cls.n_loc_cases = static_cast<int>(ious_all.size());
        cls.miou_all = with_mean_ci(ious_all, options, base_stream + 6);
        cls.miou_tp = with_mean_ci(ious_tp, options, base_stream + 7);
        if (cls.miou_all) means_miou_all.push_back(cls.miou_all->point);
        if (cls.miou_tp) means_miou_tp.push_back(cls.miou_tp->point);

        report.classes.push_back(std::move(cls));
    }

    report.mean_auroc = mean_of(means_auroc);
    report.mean_sensitivity = mean_of(means_sens);
    report.mean_specificity = mean_of(means_spec);
    report.mean_accuracy = mean_of(means_acc);
    report.mean_hit_rate = mean_of(means_hit);
    report.mean_miou_all = mean_of(means_miou_all);
    report.mean_miou_tp = mean_of(means_miou_tp);
    return report;
}

namespace {

nlohmann::json metric_json(const std::optional<MetricWithCi>& m) {
    if (!m) return nullptr;
    nlohmann::json j{{"point", m->point}};
    if (m->ci) {
        j["ci_lo"] = m->ci->lo;
        j["ci_hi"] = m->ci->hi;
    }
    return j;
}

nlohmann::json opt_json(const std::optional<double>& v) {
    if (!v) return nullptr;
    return *v;
}

std::string fmt3(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(3) << v;
    return os.str();
}

std::string metric_cell(const std::optional<MetricWithCi>& m) {
    if (!m) return "--";
    std::string s = fmt3(m->point);
    if (m->ci) s += " [" + fmt3(m->ci->lo) + "--" + fmt3(m->ci->hi) + "]";
    return s;
}

std::string mean_cell(const std::optional<double>& v) { return v ? fmt3(*v) : "--"; }

}  // namespace

nlohmann::json report_to_json(const EvalReport& report) {
    nlohmann::json classes = nlohmann::json::array();
    for (const ClassEvalReport& c : report.classes) {
        nlohmann::json jc{
            {"name", c.name},
            {"classification",
             {{"auroc", metric_json(c.auroc)},
              {"sensitivity", metric_json(c.sensitivity)},
              {"specificity", metric_json(c.specificity)},
              {"accuracy", metric_json(c.accuracy)},
              {"threshold", std::isfinite(c.threshold)
                                ? nlohmann::json(c.threshold)
                                : nlohmann::json(c.threshold > 0 ? "inf" : "-inf")}}},
            {"localization",
             {{"hit_rate", metric_json(c.hit_rate)},
              {"miou_all_cases", metric_json(c.miou_all)},
              {"miou_tp_only", metric_json(c.miou_tp)},
              {"num_hit_cases", c.n_hit_cases},
              {"num_cases", c.n_loc_cases}}},
            {"num_test_samples", c.n_test}};
        classes.push_back(std::move(jc));
    }
    return nlohmann::json{{"classes", classes},
                          {"mean",
                           {{"auroc", opt_json(report.mean_auroc)},
                            {"sensitivity", opt_json(report.mean_sensitivity)},
                            {"specificity", opt_json(report.mean_specificity)},
                            {"accuracy", opt_json(report.mean_accuracy)},
                            {"hit_rate", opt_json(report.mean_hit_rate)},
                            {"miou_all_cases", opt_json(report.mean_miou_all)},
                            {"miou_tp_only", opt_json(report.mean_miou_tp)}}},
                          {"method", report.method},
                          {"shift_offset", report.shift_offset},
                          {"segmentation_threshold", report.seg_threshold},
                          {"bootstrap_resamples", report.bootstrap_resamples},
                          {"seed", report.seed}};
}

std::string report_to_table(const EvalReport& report) {
    const std::vector<std::string> headers = {"Class",    "AUROC",   "Accuracy",  "Sensitivity",
                                              "Specificity", "Hit rate", "mIoU (all)", "mIoU (TP)"};
    std::vector<std::vector<std::string>> rows;
    for (const ClassEvalReport& c : report.classes) {
        rows.push_back({c.name, metric_cell(c.auroc), metric_cell(c.accuracy),
                        metric_cell(c.sensitivity), metric_cell(c.specificity),
                        metric_cell(c.hit_rate), metric_cell(c.miou_all), metric_cell(c.miou_tp)});
    }
    rows.push_back({"Mean", mean_cell(report.mean_auroc), mean_cell(report.mean_accuracy),
                    mean_cell(report.mean_sensitivity), mean_cell(report.mean_specificity),
                    mean_cell(report.mean_hit_rate), mean_cell(report.mean_miou_all),
                    mean_cell(report.mean_miou_tp)});

    std::vector<size_t> widths(headers.size());
    for (size_t i = 0; i < headers.size(); ++i) widths[i] = headers[i].size();
    for (const auto& row : rows) {
        for (size_t i = 0; i < row.size(); ++i) widths[i] = std::max(widths[i], row[i].size());
    }
    std::ostringstream out;
    auto emit_row = [&](const std::vector<std::string>& row) {
        for (size_t i = 0; i < row.size(); ++i) {
            out << std::left << std::setw(static_cast<int>(widths[i])) << row[i];
            if (i + 1 < row.size()) out << "  ";
        }
        out << "\n";
    };
    out << "method: " << report.method;
    if (report.method != "gradcam") out << " (shift offset " << report.shift_offset << ")";
    out << ", segmentation threshold " << fmt3(report.seg_threshold) << "\n";
    emit_row(headers);
    size_t total = 0;
    for (size_t i = 0; i < widths.size(); ++i) total += widths[i] + (i + 1 < widths.size() ? 2 : 0);
    out << std::string(total, '-') << "\n";
    for (size_t i = 0; i + 1 < rows.size(); ++i) emit_row(rows[i]);
    out << std::string(total, '-') << "\n";
    emit_row(rows.back());
    return out.str();
}

}  // namespace patchnet
