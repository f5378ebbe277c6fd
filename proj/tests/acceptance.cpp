// Acceptance suite: runs every acceptance criterion end to end and prints one
// pass/fail line per criterion. Exits non-zero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <sstream>

#include "oracles.hpp"
#include "patchnet/dataset.hpp"
#include "patchnet/eval.hpp"
#include "patchnet/metrics.hpp"
#include "patchnet/patch_engine.hpp"
#include "patchnet/saliency.hpp"
#include "patchnet/train.hpp"

using namespace patchnet;
using oracles::random_tensor;

namespace {

int g_failures = 0;

struct Criterion {
    int id;
    std::string name;
    bool ok = true;
    std::ostringstream detail;

    Criterion(int id_, std::string name_) : id(id_), name(std::move(name_)) {}

    void require(bool cond, const std::string& what) {
        if (!cond) {
            ok = false;
            detail << (detail.str().empty() ? "" : "; ") << what;
        }
    }

    void finish() {
        if (!ok) ++g_failures;
        std::cout << (ok ? "[PASS]" : "[FAIL]") << " criterion " << id << ": " << name;
        if (!ok) std::cout << " (" << detail.str() << ")";
        std::cout << std::endl;
    }
};

double wall_seconds(const std::function<void()>& fn) {
    const auto start = std::chrono::steady_clock::now();
    fn();
    const auto end = std::chrono::steady_clock::now();
    return std::chrono::duration<double>(end - start).count();
}

double median3(double a, double b, double c) {
    std::vector<double> v{a, b, c};
    std::sort(v.begin(), v.end());
    return v[1];
}

// ---------------------------------------------------------------------------
// Shared synthetic experiment (criteria 4, 6, 7, 8): default generator at
// desk scale, three training seeds with the desk config.

struct SeedRun {
    Backbone model;
    double train_seconds = 0.0;
};

struct Experiment {
    SyntheticSpec spec;           // defaults: S=64, C=4, blob/ridge/marker/texture
    PatchGridSpec grid{64, 8};
    Dataset dataset;
    std::vector<TrainSample> train_set, valid_set;
    std::vector<SeedRun> runs;    // seeds 1, 2, 3

    static TrainConfig desk_config(uint64_t seed) {
        TrainConfig config;
        config.epochs = 20;
        config.batch_images = 16;
        config.peak_lr = 3e-3;
        config.warmup_fraction = 0.05;
        config.weight_decay = 0.01;
        config.seed = seed;
        // Desk-size crop range: corner markers survive often enough for the
        // shortcut to be learnable from 2000 images.
        config.augment.crop_area_min = 0.8;
        return config;
    }

    Experiment() {
        dataset.image_side = spec.image_side;
        dataset.class_names = spec.class_names();
        dataset.samples = generate_dataset(spec, DatasetCounts{2000, 200, 200}, 606);
        for (const Sample& s : dataset.samples) {
            if (s.split == Split::train) train_set.push_back({s.image, s.labels});
            if (s.split == Split::valid) valid_set.push_back({s.image, s.labels});
        }
        BackboneConfig bcfg;
        bcfg.num_classes = spec.num_classes;
        bcfg.stage_channels = {8, 16};
        bcfg.input_side = grid.patch_side;
        for (uint64_t seed : {1ull, 2ull, 3ull}) {
            SeedRun run;
            std::cerr << "  [experiment] training seed " << seed << "...\n";
            run.train_seconds = wall_seconds([&] {
                TrainResult result = train(Backbone::build(bcfg, seed), train_set, valid_set,
                                           grid, desk_config(seed));
                run.model = std::move(result.model);
            });
            std::cerr << "  [experiment] seed " << seed << " trained in " << run.train_seconds
                      << " s\n";
            runs.push_back(std::move(run));
        }
    }
};

Experiment& experiment() {
    static Experiment e;
    return e;
}

// ---------------------------------------------------------------------------
// criterion 1: gradient correctness

void criterion_1() {
    Criterion c(1, "gradient correctness (central differences, rel err <= 1e-4, <= 60 s)");
    const double elapsed = wall_seconds([&] {
        Rng rng(1001);

        // Per-op checks through a scalar readout.
        {
            Tensor x = random_tensor({2, 2, 6, 6}, rng, 0.5, true);
            Tensor w = random_tensor({3, 2, 3, 3}, rng, 0.5, true);
            Tensor b = random_tensor({3}, rng, 0.2, true);
            Tensor readout = random_tensor({2, 3}, rng);
            auto loss_value = [&]() {
                NoGradGuard no_grad;
                return sum(mul(global_avg_pool(relu(conv2d(x, w, b, 1, 1))), readout)).item();
            };
            Tensor loss = sum(mul(global_avg_pool(relu(conv2d(x, w, b, 1, 1))), readout));
            backward(loss);
            c.require(oracles::fd_check(x, loss_value, x.grad()) <= 1e-4, "conv2d input grad");
            c.require(oracles::fd_check(w, loss_value, w.grad()) <= 1e-4, "conv2d weight grad");
            c.require(oracles::fd_check(b, loss_value, b.grad()) <= 1e-4, "conv2d bias grad");
        }
        {
            Tensor x = random_tensor({4, 5}, rng, 1.0, true);
            Tensor w = random_tensor({3, 5}, rng, 1.0, true);
            Tensor b = random_tensor({3}, rng, 1.0, true);
            Tensor readout = random_tensor({4, 3}, rng);
            auto loss_value = [&]() {
                NoGradGuard no_grad;
                return sum(mul(sigmoid(linear(x, w, b)), readout)).item();
            };
            Tensor loss = sum(mul(sigmoid(linear(x, w, b)), readout));
            backward(loss);
            c.require(oracles::fd_check(x, loss_value, x.grad()) <= 1e-4, "linear input grad");
            c.require(oracles::fd_check(w, loss_value, w.grad()) <= 1e-4, "linear weight grad");
            c.require(oracles::fd_check(b, loss_value, b.grad()) <= 1e-4, "linear bias grad");
        }
        {
            Tensor logits = random_tensor({3, 4}, rng, 2.0, true);
            std::vector<double> t(12);
            for (double& v : t) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
            Tensor targets = Tensor::from_data({3, 4}, t);
            auto loss_value = [&]() {
                NoGradGuard no_grad;
                return bce_with_logits(logits, targets).item();
            };
            Tensor loss = bce_with_logits(logits, targets);
            backward(loss);
            c.require(oracles::fd_check(logits, loss_value, logits.grad()) <= 1e-4,
                      "bce_with_logits grad");
        }

        // Full backbone: every parameter against central differences.
        BackboneConfig cfg;
        cfg.num_classes = 2;
        cfg.stage_channels = {3, 4};
        cfg.input_side = 8;
        Backbone model = Backbone::build(cfg, 77);
        Tensor batch = random_tensor({2, 1, 8, 8}, rng, 0.4);
        std::vector<double> t(4);
        for (double& v : t) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
        Tensor targets = Tensor::from_data({2, 2}, t);
        auto loss_value = [&]() {
            NoGradGuard no_grad;
            return bce_with_logits(model.forward(batch), targets).item();
        };
        model.zero_grad();
        Tensor loss = bce_with_logits(model.forward(batch), targets);
        backward(loss);
        for (auto& [name, param] : model.parameters()) {
            c.require(param.has_grad(), "missing grad for " + name);
            if (!param.has_grad()) continue;
            const double err = oracles::fd_check(param, loss_value, param.grad());
            c.require(err <= 1e-4, name + " rel err " + std::to_string(err));
        }
    });
    c.require(elapsed <= 60.0, "gradient suite took " + std::to_string(elapsed) + " s");
    c.finish();
}

// ---------------------------------------------------------------------------
// criterion 2: decomposition exactness

void criterion_2() {
    Criterion c(2, "decomposition exactness (Z = row-major mean of z; occlusion identity)");
    Rng rng(2002);
    for (int trial = 0; trial < 100; ++trial) {
        const int P = 2 + static_cast<int>(rng.uniform_index(3));  // 2..4
        const int p = 4;
        BackboneConfig cfg;
        cfg.num_classes = 1 + static_cast<int>(rng.uniform_index(3));
        cfg.stage_channels = {3};
        cfg.input_side = p;
        Backbone model = Backbone::build(cfg, 3000 + trial);
        Tensor image = random_tensor({1, size_t(P * p), size_t(P * p)}, rng, 0.5);
        const PatchGridSpec spec(P * p, P);
        PatchLogitGrid grid = predict(image, model, spec);

        for (int k = 0; k < cfg.num_classes; ++k) {
            double s = 0.0;
            for (int r = 0; r < P; ++r) {
                for (int col = 0; col < P; ++col) s += grid.z(r, col, k);
            }
            if (std::abs(grid.global_logits[k] - s / spec.num_patches()) > 1e-12) {
                c.require(false, "Z mismatch at trial " + std::to_string(trial));
            }
        }

        // occlusion_delta vs substitute-and-reaverage.
        const int rr = static_cast<int>(rng.uniform_index(P));
        const int cc = static_cast<int>(rng.uniform_index(P));
        std::vector<double> replacement(cfg.num_classes);
        for (double& v : replacement) v = rng.normal();
        const std::vector<double> delta = occlusion_delta(grid, rr, cc, replacement);
        for (int k = 0; k < cfg.num_classes; ++k) {
            double s = 0.0;
            for (int r = 0; r < P; ++r) {
                for (int col = 0; col < P; ++col) {
                    s += (r == rr && col == cc) ? replacement[k] : grid.z(r, col, k);
                }
            }
            if (std::abs(delta[k] - s / spec.num_patches()) > 1e-12) {
                c.require(false, "occlusion mismatch at trial " + std::to_string(trial));
            }
        }
    }
    c.finish();
}

// ---------------------------------------------------------------------------
// criterion 3: degenerate P=1 equivalence

void criterion_3() {
    Criterion c(3, "degenerate equivalence (P=1 pipeline == direct full-image forward)");
    Rng rng(3003);
    for (int trial = 0; trial < 100; ++trial) {
        BackboneConfig cfg;
        cfg.num_classes = 1 + static_cast<int>(rng.uniform_index(4));
        cfg.stage_channels = {3};
        cfg.input_side = 12;
        Backbone model = Backbone::build(cfg, 4000 + trial);
        Tensor image = random_tensor({1, 12, 12}, rng, 0.5);

        const std::vector<double> via_patches = predict_full_image(image, model);
        NoGradGuard no_grad;
        Tensor direct = model.forward(
            Tensor::from_data({1, 1, 12, 12}, {image.data().begin(), image.data().end()}));
        for (int k = 0; k < cfg.num_classes; ++k) {
            if (std::abs(via_patches[k] - direct.data()[k]) > 1e-12) {
                c.require(false, "trial " + std::to_string(trial) + " class " +
                                     std::to_string(k) + " differs");
            }
        }
    }
    c.finish();
}

// ---------------------------------------------------------------------------
// criterion 4: shift-map oracle and smoothing behavior

void criterion_4() {
    Criterion c(4, "shift-map oracle exact; o=p bitwise; TV strictly decreases with o");
    // Exact per-pixel oracle on 16x16 images, p=4, o in {1,2,4}.
    Rng rng(4004);
    BackboneConfig cfg;
    cfg.num_classes = 2;
    cfg.stage_channels = {3};
    cfg.input_side = 4;
    Backbone model = Backbone::build(cfg, 99);
    const PatchGridSpec spec(16, 4);
    Tensor image = random_tensor({1, 16, 16}, rng, 0.5);
    const int S = 16, p = 4;

    for (int o : {1, 2, 4}) {
        SaliencyMap map = shifted_saliency(image, model, spec, ShiftSpec(o), 1, false);
        const int m = p / o;
        std::vector<double> expect(S * S, 0.0);
        for (int dy = 0; dy < p; dy += o) {
            for (int dx = 0; dx < p; dx += o) {
                std::vector<double> shifted(S * S, 0.0);
                for (int y = 0; y < S; ++y) {
                    for (int x = 0; x < S; ++x) {
                        if (y + dy < S && x + dx < S) {
                            shifted[y * S + x] = image.data()[(y + dy) * S + (x + dx)];
                        }
                    }
                }
                PatchLogitGrid g = predict(Tensor::from_data({1, 16, 16}, shifted), model, spec);
                for (int y = dy; y < S; ++y) {
                    for (int x = dx; x < S; ++x) {
                        expect[y * S + x] += g.z((y - dy) / p, (x - dx) / p, 1);
                    }
                }
            }
        }
        for (int i = 0; i < S * S; ++i) {
            if (map.values[i] != expect[i] / (m * m)) {
                c.require(false, "per-pixel oracle mismatch at o=" + std::to_string(o));
                break;
            }
        }
    }

    // o = p reproduces the single block map bit for bit.
    {
        PatchLogitGrid g = predict(image, model, spec);
        SaliencyMap block = patch_saliency(g, 0, false);
        SaliencyMap via_shift = shifted_saliency(image, model, spec, ShiftSpec(4), 0, false);
        for (size_t i = 0; i < block.values.size(); ++i) {
            if (block.values[i] != via_shift.values[i]) {
                c.require(false, "o=p map is not bit-identical");
                break;
            }
        }
    }

    // Smoothness on the trained synthetic model: block-boundary total
    // variation strictly decreases as the offset shrinks.
    Experiment& e = experiment();
    const Sample* target = nullptr;
    for (const Sample& s : e.dataset.samples) {
        if (s.split == Split::test && s.labels[0]) {
            target = &s;
            break;
        }
    }
    c.require(target != nullptr, "no blob-positive test sample");
    if (target) {
        Tensor img = image_to_tensor(target->image);
        double prev_tv = -1.0;
        for (int o : {8, 4, 2, 1}) {
            SaliencyMap map = shifted_saliency(img, e.runs[0].model, e.grid, ShiftSpec(o), 0,
                                               false);
            const double tv = block_boundary_tv(map, e.grid.patch_side);
            if (prev_tv >= 0.0) {
                c.require(tv < prev_tv, "TV did not decrease at o=" + std::to_string(o) + " (" +
                                            std::to_string(tv) + " vs " +
                                            std::to_string(prev_tv) + ")");
            }
            prev_tv = tv;
        }
    }
    c.finish();
}

// ---------------------------------------------------------------------------
// criterion 5: metric oracles

void criterion_5() {
    Criterion c(5, "metric oracles (AUROC pairwise; threshold exhaustive; hit-rate MC; IoU)");
    Rng rng(5005);

    // AUROC vs pairwise brute force, instances up to 50 points with ties.
    for (int trial = 0; trial < 300; ++trial) {
        const size_t n = 2 + rng.uniform_index(49);
        std::vector<double> scores(n);
        std::vector<uint8_t> labels(n);
        bool pos = false, neg = false;
        for (size_t i = 0; i < n; ++i) {
            scores[i] = std::floor(rng.uniform() * 6.0) / 6.0;
            labels[i] = rng.uniform() < 0.5 ? 1 : 0;
            pos = pos || labels[i];
            neg = neg || !labels[i];
        }
        if (!pos || !neg) continue;
        if (std::abs(auroc(scores, labels) - oracles::pairwise_auroc(scores, labels)) > 1e-12) {
            c.require(false, "auroc mismatch at trial " + std::to_string(trial));
            break;
        }
    }

    // optimal_threshold vs exhaustive candidate search.
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> scores(25);
        std::vector<uint8_t> labels(25);
        for (size_t i = 0; i < scores.size(); ++i) {
            scores[i] = std::floor(rng.uniform() * 12.0) / 12.0;
            labels[i] = rng.uniform() < 0.5 ? 1 : 0;
        }
        labels[0] = 1;
        labels[1] = 0;
        const double chosen = optimal_threshold(scores, labels);
        std::vector<double> distinct(scores.begin(), scores.end());
        std::sort(distinct.begin(), distinct.end());
        distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
        std::vector<double> candidates{-std::numeric_limits<double>::infinity()};
        for (size_t i = 0; i + 1 < distinct.size(); ++i) {
            candidates.push_back((distinct[i] + distinct[i + 1]) / 2.0);
        }
        candidates.push_back(std::numeric_limits<double>::infinity());
        double best = candidates.front(), best_j = -1.0;
        for (double t : candidates) {
            const ConfusionRates r = rates_at_threshold(scores, labels, t);
            if (r.sensitivity + r.specificity >= best_j) {
                best_j = r.sensitivity + r.specificity;
                best = t;
            }
        }
        if (chosen != best) {
            c.require(false, "threshold mismatch at trial " + std::to_string(trial));
            break;
        }
    }

    // Hit rate of random points vs the mask area fraction (Monte Carlo).
    {
        const int side = 32;
        const size_t area = 160;
        const double fraction = double(area) / (side * side);
        std::vector<HitRateCase> cases;
        cases.reserve(10000);
        for (int i = 0; i < 10000; ++i) {
            std::vector<size_t> idx(size_t(side) * side);
            std::iota(idx.begin(), idx.end(), 0);
            for (size_t j = idx.size(); j > 1; --j) std::swap(idx[j - 1], idx[rng.uniform_index(j)]);
            Mask m = Mask::zeros(side);
            for (size_t j = 0; j < area; ++j) m.px[idx[j]] = 1;
            cases.push_back({{static_cast<int>(rng.uniform_index(side)),
                              static_cast<int>(rng.uniform_index(side))},
                             std::move(m)});
        }
        const double rate = hit_rate(cases);
        const double sigma = std::sqrt(fraction * (1.0 - fraction) / cases.size());
        c.require(std::abs(rate - fraction) <= 3.0 * sigma,
                  "hit rate " + std::to_string(rate) + " vs fraction " + std::to_string(fraction));
    }

    // IoU hand cases.
    {
        Mask a = Mask::zeros(2);
        a.px = {1, 1, 0, 0};
        Mask b = Mask::zeros(2);
        b.px = {1, 0, 1, 1};
        c.require(iou(a, a) == 1.0, "identical masks");
        c.require(iou(a, b) == 0.25, "2px vs 3px overlap 1 -> 0.25");
        Mask disjoint = Mask::zeros(2);
        disjoint.px = {0, 0, 1, 1};
        c.require(iou(a, disjoint) == 0.0, "disjoint masks");
        Mask empty = Mask::zeros(2);
        c.require(iou(empty, empty) == 1.0, "both empty");
        c.require(iou(a, empty) == 0.0, "one empty");
    }
    c.finish();
}

// ---------------------------------------------------------------------------
// criterion 6: synthetic end-to-end experiment

struct SeedMetrics {
    double blob_auroc = 0.0;
    double blob_hit_rate = 0.0;
    double blob_random_baseline = 0.0;
    double marker_shortcut_rate = 0.0;
    double locality_drop = 0.0;  // median probability drop when the blob is masked out
};

SeedMetrics seed_metrics(const Experiment& e, const Backbone& model) {
    SeedMetrics m;
    std::vector<double> blob_scores;
    std::vector<uint8_t> blob_labels;
    std::vector<double> blob_hits, marker_hits, area_fractions, prob_drops;
    const int blob_class = 0, marker_class = 2;

    for (const Sample& s : e.dataset.samples) {
        if (s.split != Split::test) continue;
        Tensor image = image_to_tensor(s.image);
        PatchLogitGrid grid = predict(image, model, e.grid);
        blob_scores.push_back(grid.probabilities[blob_class]);
        blob_labels.push_back(s.labels[blob_class]);

        if (s.labels[blob_class] && s.masks[blob_class].any()) {
            SaliencyMap map = patch_saliency(grid, blob_class, false);
            const auto [row, col] = most_salient_point(map);
            blob_hits.push_back(s.masks[blob_class].at(row, col) ? 1.0 : 0.0);
            area_fractions.push_back(static_cast<double>(s.masks[blob_class].area()) /
                                     (s.image.side * s.image.side));

            // Generator locality: erasing the in-mask evidence must lower the
            // predicted blob probability.
            Image wiped = s.image;
            for (int y = 0; y < s.image.side; ++y) {
                for (int x = 0; x < s.image.side; ++x) {
                    if (s.masks[blob_class].at(y, x)) wiped.at(y, x) = 0.0;
                }
            }
            PatchLogitGrid wiped_grid = predict(image_to_tensor(wiped), model, e.grid);
            prob_drops.push_back(grid.probabilities[blob_class] -
                                 wiped_grid.probabilities[blob_class]);
        }
        if (s.labels[marker_class] && s.masks[marker_class].any()) {
            SaliencyMap map = patch_saliency(grid, marker_class, false);
            const auto [row, col] = most_salient_point(map);
            marker_hits.push_back(s.masks[marker_class].at(row, col) ? 1.0 : 0.0);
        }
    }
    m.blob_auroc = auroc(blob_scores, blob_labels);
    auto mean = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return v.empty() ? 0.0 : s / v.size();
    };
    m.blob_hit_rate = mean(blob_hits);
    m.blob_random_baseline = mean(area_fractions);
    m.marker_shortcut_rate = mean(marker_hits);
    std::vector<double> drops = prob_drops;
    std::sort(drops.begin(), drops.end());
    m.locality_drop = drops.empty() ? 0.0 : drops[drops.size() / 2];
    return m;
}

void criterion_6() {
    Criterion c(6, "synthetic end-to-end (AUROC, hit rate vs baseline, shortcut exposure)");
    Experiment& e = experiment();

    std::vector<SeedMetrics> per_seed;
    for (const SeedRun& run : e.runs) {
        c.require(run.train_seconds <= 600.0,
                  "training took " + std::to_string(run.train_seconds) + " s (> 10 min)");
        per_seed.push_back(seed_metrics(e, run.model));
    }

    const double med_auroc =
        median3(per_seed[0].blob_auroc, per_seed[1].blob_auroc, per_seed[2].blob_auroc);
    c.require(med_auroc >= 0.90,
              "blob AUROC 3-seed median " + std::to_string(med_auroc) + " < 0.90");

    const double med_hit =
        median3(per_seed[0].blob_hit_rate, per_seed[1].blob_hit_rate, per_seed[2].blob_hit_rate);
    const double med_baseline = median3(per_seed[0].blob_random_baseline,
                                        per_seed[1].blob_random_baseline,
                                        per_seed[2].blob_random_baseline);
    c.require(med_hit >= 3.0 * med_baseline,
              "blob hit rate " + std::to_string(med_hit) + " < 3x baseline " +
                  std::to_string(med_baseline));

    const double med_shortcut = median3(per_seed[0].marker_shortcut_rate,
                                        per_seed[1].marker_shortcut_rate,
                                        per_seed[2].marker_shortcut_rate);
    c.require(med_shortcut >= 0.70,
              "marker shortcut-exposure rate " + std::to_string(med_shortcut) + " < 0.70");

    const double med_drop =
        median3(per_seed[0].locality_drop, per_seed[1].locality_drop, per_seed[2].locality_drop);
    c.require(med_drop > 0.0, "masking the blob evidence did not lower its probability");

    std::cerr << "  [experiment] blob AUROC median " << med_auroc << ", hit rate " << med_hit
              << " (baseline " << med_baseline << "), shortcut rate " << med_shortcut
              << ", locality drop " << med_drop << "\n";
    c.finish();
}

// ---------------------------------------------------------------------------
// criterion 7: statistical plumbing

void criterion_7() {
    Criterion c(7, "statistical plumbing (CIs contain points; byte-identical reports; table)");
    Experiment& e = experiment();
    EvalOptions options;
    options.method = SaliencyMethod::patch_raw;
    options.bootstrap_resamples = 300;
    options.seed = 17;

    const EvalReport report = evaluate(e.dataset, e.runs[0].model, e.grid, options);
    const EvalReport report_again = evaluate(e.dataset, e.runs[0].model, e.grid, options);
    c.require(report_to_json(report).dump() == report_to_json(report_again).dump(),
              "reports differ across identical runs");

    auto check_ci = [&](const std::optional<MetricWithCi>& m, const std::string& what) {
        if (!m) return;
        c.require(m->ci.has_value(), what + " missing CI");
        if (m->ci) {
            c.require(m->ci->lo <= m->point && m->point <= m->ci->hi,
                      what + " CI [" + std::to_string(m->ci->lo) + "," +
                          std::to_string(m->ci->hi) + "] misses point " +
                          std::to_string(m->point));
        }
    };
    for (const ClassEvalReport& cls : report.classes) {
        check_ci(cls.auroc, cls.name + " auroc");
        check_ci(cls.sensitivity, cls.name + " sensitivity");
        check_ci(cls.specificity, cls.name + " specificity");
        check_ci(cls.accuracy, cls.name + " accuracy");
        check_ci(cls.hit_rate, cls.name + " hit_rate");
        check_ci(cls.miou_all, cls.name + " miou_all");
        check_ci(cls.miou_tp, cls.name + " miou_tp");
    }

    // Table shape: one data row per class plus a Mean row.
    const std::string table = report_to_table(report);
    for (const std::string& name : e.dataset.class_names) {
        c.require(table.find("\n" + name) != std::string::npos, "table missing row " + name);
    }
    c.require(table.find("\nMean") != std::string::npos, "table missing Mean row");
    c.finish();
}

// ---------------------------------------------------------------------------
// criterion 8: TP-only vs all-cases mIoU ordering

void criterion_8() {
    Criterion c(8, "mIoU ordering (TP-only >= all-cases whenever FP or FN are present)");

    // Real pipeline cases from the trained model.
    Experiment& e = experiment();
    const Backbone& model = e.runs[0].model;
    const int C = e.spec.num_classes;

    std::vector<const Sample*> valid_samples, test_samples;
    for (const Sample& s : e.dataset.samples) {
        if (s.split == Split::valid) valid_samples.push_back(&s);
        if (s.split == Split::test) test_samples.push_back(&s);
    }

    std::vector<std::vector<double>> valid_scores(C), test_scores(C);
    std::vector<std::vector<uint8_t>> valid_labels(C);
    std::vector<std::vector<SaliencyMap>> test_maps(C);
    for (const Sample* s : valid_samples) {
        PatchLogitGrid grid = predict(image_to_tensor(s->image), model, e.grid);
        for (int k = 0; k < C; ++k) {
            valid_scores[k].push_back(grid.probabilities[k]);
            valid_labels[k].push_back(s->labels[k]);
        }
    }
    for (const Sample* s : test_samples) {
        PatchLogitGrid grid = predict(image_to_tensor(s->image), model, e.grid);
        for (int k = 0; k < C; ++k) {
            test_scores[k].push_back(grid.probabilities[k]);
            test_maps[k].push_back(patch_saliency(grid, k, false));
        }
    }

    bool saw_fp_or_fn = false;
    for (int k = 0; k < C; ++k) {
        const double threshold = optimal_threshold(valid_scores[k], valid_labels[k]);
        std::vector<LocalizationCase> cases;
        double tp_iou_sum = 0.0;
        int fp_fn = 0;
        for (size_t i = 0; i < test_samples.size(); ++i) {
            const Sample& s = *test_samples[i];
            LocalizationCase lc;
            lc.gt_present = k < static_cast<int>(s.masks.size()) && s.masks[k].any();
            lc.predicted_positive = test_scores[k][i] >= threshold;
            lc.gt_mask = lc.gt_present ? s.masks[k] : Mask::zeros(s.image.side);
            if (lc.predicted_positive) lc.pred_mask = threshold_to_mask(test_maps[k][i], 0.6);
            if (lc.category() == CaseCategory::TP) {
                tp_iou_sum += iou(lc.pred_mask, lc.gt_mask);
            }
            if (lc.category() == CaseCategory::FP || lc.category() == CaseCategory::FN) ++fp_fn;
            cases.push_back(std::move(lc));
        }
        double tp_only;
        try {
            tp_only = miou_tp_only(cases);
        } catch (const Error&) {
            continue;
        }
        const double all = miou_all_cases(cases);
        if (fp_fn > 0) {
            saw_fp_or_fn = true;
            c.require(tp_only >= all, "class " + std::to_string(k) + ": TP-only " +
                                          std::to_string(tp_only) + " < all-cases " +
                                          std::to_string(all));
            if (tp_iou_sum > 0.0) {
                c.require(tp_only > all, "class " + std::to_string(k) + ": ordering not strict");
            }
        }
    }
    c.require(saw_fp_or_fn, "no evaluation with FP or FN cases materialized");

    // Randomized case sets with non-empty predictions.
    Rng rng(8008);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<LocalizationCase> cases;
        double tp_iou_sum = 0.0;
        int fp_fn = 0;
        const int n = 4 + static_cast<int>(rng.uniform_index(10));
        auto random_mask = [&](size_t area) {
            Mask m = Mask::zeros(5);
            std::vector<size_t> idx(25);
            std::iota(idx.begin(), idx.end(), 0);
            for (size_t j = idx.size(); j > 1; --j) std::swap(idx[j - 1], idx[rng.uniform_index(j)]);
            for (size_t j = 0; j < area; ++j) m.px[idx[j]] = 1;
            return m;
        };
        for (int i = 0; i < n; ++i) {
            LocalizationCase lc;
            const double kind = rng.uniform();
            if (kind < 0.5) {
                lc.gt_present = true;
                lc.predicted_positive = true;
                lc.gt_mask = random_mask(4 + rng.uniform_index(6));
                lc.pred_mask = random_mask(4 + rng.uniform_index(6));
                tp_iou_sum += iou(lc.pred_mask, lc.gt_mask);
            } else if (kind < 0.75) {
                lc.gt_present = true;
                lc.predicted_positive = false;
                lc.gt_mask = random_mask(4);
                ++fp_fn;
            } else {
                lc.gt_present = false;
                lc.predicted_positive = true;
                lc.pred_mask = random_mask(4);
                lc.gt_mask = Mask::zeros(5);
                ++fp_fn;
            }
            cases.push_back(std::move(lc));
        }
        double tp_only;
        try {
            tp_only = miou_tp_only(cases);
        } catch (const Error&) {
            continue;
        }
        const double all = miou_all_cases(cases);
        if (fp_fn > 0) {
            c.require(tp_only >= all, "random trial " + std::to_string(trial) + " ordering");
            if (tp_iou_sum > 0.0) {
                c.require(tp_only > all,
                          "random trial " + std::to_string(trial) + " strict ordering");
            }
        }
    }
    c.finish();
}

}  // namespace

int main() {
    std::cout << "patchnet acceptance suite\n";
    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_5();
    criterion_6();
    criterion_7();
    criterion_8();
    if (g_failures == 0) {
        std::cout << "all 8 criteria passed\n";
        return 0;
    }
    std::cout << g_failures << " criteria failed\n";
    return 1;
}
