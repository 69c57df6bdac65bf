// SPDX-License-Identifier: Apache-2.0
//
// Acceptance gate. Each criterion prints exactly one [PASS]/[FAIL] line with
// its measured numbers; the exit code is the number of failed criteria.
// Optional argv: a list of criterion numbers to run (default: all).
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "crossmatch/featperturb.hpp"
#include "crossmatch/trainer.hpp"
#include "testutil.hpp"

using namespace crossmatch;
using namespace crossmatch::losses;
using ad::Tensor;
namespace fs = std::filesystem;

namespace {

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof(buf), f, ap);
    va_end(ap);
    return buf;
}

struct Outcome {
    bool ok = true;
    std::string detail;
};

// ---- shared fixtures -------------------------------------------------------

std::vector<SampleRecord> synth_split(const SynthSpec& spec, double labeled_fraction,
                                      uint64_t split_seed, size_t* n_labeled = nullptr) {
    SplitSpec sp;
    sp.labeled_fraction = labeled_fraction;
    sp.seed = split_seed;
    sp.num_classes = spec.num_classes;
    auto [lab, unlab] = make_split(synth_generate(spec), sp);
    if (n_labeled) *n_labeled = lab.size();
    std::vector<SampleRecord> train = lab;
    for (auto& r : unlab) train.push_back(std::move(r));
    return train;
}

std::vector<double> flat_params(const TrainState& st) {
    std::vector<double> v;
    for (const auto& p : st.net.params().params())
        v.insert(v.end(), p.t.values().begin(), p.t.values().end());
    return v;
}

StreamSet random_streams(uint64_t seed) {
    Rng rng(seed);
    StreamSet s;
    s.p_w_n = testutil::random_tensor({2, 3, 4, 4}, rng, -2.0, 2.0, false);
    s.p_w_w = testutil::random_tensor({2, 3, 4, 4}, rng, -2.0, 2.0, true);
    s.p_w_s = testutil::random_tensor({2, 3, 4, 4}, rng, -2.0, 2.0, true);
    s.p_s_w = testutil::random_tensor({2, 3, 4, 4}, rng, -2.0, 2.0, true);
    s.p_s_s = testutil::random_tensor({2, 3, 4, 4}, rng, -2.0, 2.0, true);
    s.p_s1 = testutil::random_tensor({2, 3, 4, 4}, rng, -2.0, 2.0, true);
    s.p_s2 = testutil::random_tensor({2, 3, 4, 4}, rng, -2.0, 2.0, true);
    return s;
}

// identical near-one-hot logits (margin 14) with every class supported, so a
// Dice-form discrepancy of a stream against itself is ~0, not smooth-limited
StreamSet identical_confident_streams(uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(2 * 3 * 4 * 4, -14.0);
    for (long b = 0; b < 2; ++b)
        for (int px = 0; px < 16; ++px) {
            const long cls = px < 3 ? px : rng.randint(0, 2);
            v[(b * 3 + cls) * 16 + px] = 14.0;
        }
    const Tensor base = Tensor::from_data({2, 3, 4, 4}, std::move(v), false);
    StreamSet s;
    s.p_w_n = base;
    auto clone = [&] { return Tensor::from_data(base.node()->shape, base.values(), true); };
    s.p_w_w = clone();
    s.p_w_s = clone();
    s.p_s_w = clone();
    s.p_s_s = clone();
    s.p_s1 = clone();
    s.p_s2 = clone();
    return s;
}

// degenerate-loss sub-checks shared by criteria 3 and 7
std::string degenerate_checks(const LossConfig& base, bool* ok) {
    const UnlabeledMixing no_mix;

    LossConfig zc = base;  // tau beyond 1: nothing can pass the gate
    zc.tau = 1.0 + 1e-9;
    StreamSet zs = random_streams(31);
    const TermResult ztkd = tkd_loss(zs, zc, no_mix);
    const TermResult zdkd = dkd_loss(zs, zc, no_mix);
    const TermResult zip = ip_loss(zs, zc, no_mix);
    bool zeros = ztkd.loss.item() == 0.0 && zdkd.loss.item() == 0.0 && zip.loss.item() == 0.0;
    const Tensor zsum = ad::add(ad::add(ztkd.loss, zdkd.loss), zip.loss);
    for (Tensor* t : {&zs.p_w_w, &zs.p_w_s, &zs.p_s_w, &zs.p_s_s, &zs.p_s1, &zs.p_s2})
        t->node()->ensure_grad();
    zsum.backward();
    for (Tensor* t : {&zs.p_w_w, &zs.p_w_s, &zs.p_s_w, &zs.p_s_s, &zs.p_s1, &zs.p_s2})
        for (double g : t->node()->grad) zeros = zeros && g == 0.0;

    const StreamSet is = identical_confident_streams(32);
    double worst_ident = 0.0;
    worst_ident = std::max(worst_ident, std::abs(tkd_loss(is, base, no_mix).loss.item()));
    worst_ident = std::max(worst_ident, std::abs(dkd_loss(is, base, no_mix).loss.item()));
    worst_ident = std::max(worst_ident, std::abs(ip_loss(is, base, no_mix).loss.item()));

    LossConfig ac = base;
    ac.tau = 0.4;
    const StreamSet as = random_streams(33);
    const Tensor sup = Tensor::scalar(1.25);
    double worst_affine = 0.0;
    for (double eta : {0.0, 0.3, 1.0}) {
        const TermResult ip = ip_loss(as, ac, no_mix);
        const TermResult tkd = tkd_loss(as, ac, no_mix);
        const TermResult dkd = dkd_loss(as, ac, no_mix);
        const auto [total, rep] = total_loss(sup, ip, tkd, dkd, eta);
        const double want =
            rep.sup + rep.ip + (1.0 - eta) * rep.tkd + eta * rep.dkd;
        worst_affine = std::max(worst_affine, std::abs(total.item() - want));
    }

    *ok = zeros && worst_ident <= 1e-6 && worst_affine <= 1e-6;
    return fmt("tau>1 zeros %s, identical-stream residual %.2e (limit 1e-6), "
               "affine residual %.2e (limit 1e-6)",
               zeros ? "exact" : "VIOLATED", worst_ident, worst_affine);
}

// ---- criterion 1: stacked/naive equivalence --------------------------------

Outcome crit1() {
    SynthSpec spec;
    spec.count = 12;
    spec.height = 24;
    spec.width = 24;
    spec.seed = 21;
    size_t n_lab = 0;
    const auto train = synth_split(spec, 0.34, 2, &n_lab);

    TrainConfig cfg;
    cfg.iterations = 20;
    cfg.batch_size = 4;
    cfg.seed = 11;
    cfg.net.base_width = 8;
    cfg.net.depth = 2;
    cfg.optimizer.lr = 0.05;
    TrainConfig naive = cfg;
    naive.naive_mode = true;

    TrainState sa(cfg), sb(naive);
    const BatchSchedule sched(static_cast<long>(n_lab),
                              static_cast<long>(train.size() - n_lab), cfg.batch_size,
                              cfg.iterations, cfg.seed);
    double worst_report = 0.0;
    long stacked_dec_max = 0;
    bool counters_ok = true;
    for (long step = 0; step < 20; ++step) {
        BatchSchedule::Batch raw = sched.batch_at(step), mapped;
        for (long j : raw.labeled) mapped.labeled.push_back(j);
        for (long j : raw.unlabeled) mapped.unlabeled.push_back(static_cast<long>(n_lab) + j);
        ForwardCounters fa, fb;
        const LossReport ra = train_step(sa, train, mapped, &fa);
        const LossReport rb = train_step(sb, train, mapped, &fb);
        for (double d : {ra.sup - rb.sup, ra.ip - rb.ip, ra.tkd - rb.tkd, ra.dkd - rb.dkd,
                         ra.total - rb.total})
            worst_report = std::max(worst_report, std::abs(d));
        counters_ok = counters_ok && fa.encoder_calls == 2 && fa.decoder_calls <= 3 &&
                      fb.encoder_calls == 3 && fb.decoder_calls == 7;
        stacked_dec_max = std::max(stacked_dec_max, fa.decoder_calls);
    }
    const auto pa = flat_params(sa), pb = flat_params(sb);
    double worst_param = 0.0;
    for (size_t i = 0; i < pa.size(); ++i)
        worst_param = std::max(worst_param, std::abs(pa[i] - pb[i]) /
                                                std::max({1.0, std::abs(pa[i]), std::abs(pb[i])}));

    Outcome o;
    o.ok = worst_param <= 1e-5 && worst_report <= 1e-6 && counters_ok;
    o.detail = fmt("stacked/naive equivalence: 20 steps, param rel err %.2e (limit 1e-5), "
                   "report diff %.2e (limit 1e-6), counters stacked 2/%ld naive 3/7%s",
                   worst_param, worst_report, stacked_dec_max,
                   counters_ok ? "" : " COUNTER MISMATCH");
    return o;
}

// ---- criterion 2: gradient suite -------------------------------------------

Outcome crit2() {
    std::vector<std::pair<std::string, double>> errs;
    Rng rng(5);

    {
        Tensor probs = testutil::random_tensor({2, 3, 4, 4}, rng, 0.05, 0.95, true);
        std::vector<double> target(96, 0.0);
        Rng lr(6);
        for (long b = 0; b < 2; ++b)
            for (int px = 0; px < 16; ++px)
                target[(b * 3 + lr.randint(0, 2)) * 16 + px] = 1.0;
        std::vector<double> mask(32);
        for (auto& m : mask) m = lr.bernoulli(0.7) ? 1.0 : 0.0;
        mask[0] = 1.0;
        errs.emplace_back("soft_dice", testutil::gradcheck(
                                           [&](const std::vector<Tensor>& in) {
                                               return soft_dice_loss(in[0], target, mask, 1e-5);
                                           },
                                           {probs}));
    }
    {
        Tensor logits = testutil::random_tensor({2, 3, 4, 4}, rng, -2, 2, true);
        Rng lr(7);
        std::vector<int32_t> target(32);
        for (auto& t : target) t = static_cast<int32_t>(lr.randint(0, 2));
        std::vector<double> mask(32);
        for (auto& m : mask) m = lr.bernoulli(0.6) ? 1.0 : 0.0;
        mask[5] = 1.0;
        errs.emplace_back("masked_ce",
                          testutil::gradcheck(
                              [&](const std::vector<Tensor>& in) {
                                  return masked_ce_loss(in[0], target, mask);
                              },
                              {logits}));
    }
    for (double T : {1.0, 2.0}) {
        Rng tr(8);
        const std::vector<double> teacher =
            testutil::random_tensor({2, 3, 4, 4}, tr, -2, 2, false).values();
        Tensor student = testutil::random_tensor({2, 3, 4, 4}, tr, -2, 2, true);
        std::vector<double> mask(32, 1.0);
        mask[3] = mask[17] = 0.0;
        errs.emplace_back(fmt("sym_kl_T%g", T),
                          testutil::gradcheck(
                              [&](const std::vector<Tensor>& in) {
                                  return kd_kl_loss(teacher, in[0], T, mask);
                              },
                              {student}));
    }
    for (HKind kind : {HKind::dice, HKind::ce, HKind::kl}) {
        Rng tr(9);
        const std::vector<double> teacher =
            testutil::random_tensor({2, 3, 4, 4}, tr, -2, 2, false).values();
        Tensor student = testutil::random_tensor({2, 3, 4, 4}, tr, -2, 2, true);
        std::vector<double> mask(32, 1.0);
        LossConfig cfg;
        cfg.h_kind = kind;
        cfg.temperature = kind == HKind::kl ? 2.0 : 1.0;
        errs.emplace_back(fmt("h_%s", h_kind_name(kind).c_str()),
                          testutil::gradcheck(
                              [&](const std::vector<Tensor>& in) {
                                  return h_loss(teacher, in[0], mask, cfg);
                              },
                              {student}));
    }
    {
        StreamSet s = random_streams(10);
        UnlabeledMixing mixing;
        mixing.s1 = {{true, 1, 1, 2, 2}, {false, 0, 0, 0, 0}};
        mixing.s2 = {{false, 0, 0, 0, 0}, {true, 0, 2, 2, 2}};
        mixing.partner = {1, 0};
        LossConfig cfg;
        cfg.tau = 0.4;
        errs.emplace_back("tkd", testutil::gradcheck(
                                     [&](const std::vector<Tensor>& in) {
                                         StreamSet ss = s;
                                         ss.p_w_w = in[0];
                                         ss.p_w_s = in[1];
                                         ss.p_s_w = in[2];
                                         ss.p_s_s = in[3];
                                         return tkd_loss(ss, cfg, mixing).loss;
                                     },
                                     {s.p_w_w, s.p_w_s, s.p_s_w, s.p_s_s}));
        errs.emplace_back("dkd", testutil::gradcheck(
                                     [&](const std::vector<Tensor>& in) {
                                         StreamSet ss = s;
                                         ss.p_s_w = in[0];
                                         ss.p_s_s = in[1];
                                         return dkd_loss(ss, cfg, mixing).loss;
                                     },
                                     {s.p_s_w, s.p_s_s}));
        errs.emplace_back("ip", testutil::gradcheck(
                                    [&](const std::vector<Tensor>& in) {
                                        StreamSet ss = s;
                                        ss.p_s1 = in[0];
                                        ss.p_s2 = in[1];
                                        return ip_loss(ss, cfg, mixing).loss;
                                    },
                                    {s.p_s1, s.p_s2}));
        errs.emplace_back(
            "total", testutil::gradcheck(
                         [&](const std::vector<Tensor>& in) {
                             StreamSet ss = s;
                             ss.p_w_w = in[0];
                             ss.p_s_s = in[1];
                             ss.p_s1 = in[2];
                             std::vector<Mask> gt;
                             Mask m0(4, 4), m1(4, 4);
                             Rng mr(12);
                             for (auto& v : m0.v) v = static_cast<int32_t>(mr.randint(0, 2));
                             for (auto& v : m1.v) v = static_cast<int32_t>(mr.randint(0, 2));
                             gt.push_back(m0);
                             gt.push_back(m1);
                             const Tensor sup = supervised_loss(in[3], gt, cfg);
                             return total_loss(sup, ip_loss(ss, cfg, mixing),
                                               tkd_loss(ss, cfg, mixing),
                                               dkd_loss(ss, cfg, mixing), cfg.eta)
                                 .first;
                         },
                         {s.p_w_w, s.p_s_s, s.p_s1, random_streams(13).p_s2}));
    }

    Outcome o;
    double worst = 0.0;
    std::string worst_name = "-";
    for (const auto& [name, err] : errs) {
        if (err > worst) {
            worst = err;
            worst_name = name;
        }
        o.ok = o.ok && err < 1e-4;
    }
    o.detail = fmt("loss-op gradient suite: %zu ops on 2x3x4x4, worst rel err %.2e (%s, "
                   "limit 1e-4)",
                   errs.size(), worst, worst_name.c_str());
    return o;
}

// ---- criterion 3: degenerate-loss invariants --------------------------------

Outcome crit3() {
    Outcome o;
    o.detail = "degenerate-loss invariants: " + degenerate_checks(LossConfig{}, &o.ok);
    return o;
}

// ---- criterion 4: metric oracle ---------------------------------------------

Outcome crit4() {
    Rng rng(0xD157);
    long pairs_defined = 0;
    bool distances_exact = true, defined_agree = true;
    std::vector<Mask> preds, gts;
    std::vector<std::string> ids;

    for (int it = 0; it < 500; ++it) {
        const int h = static_cast<int>(rng.randint(1, 16));
        const int w = static_cast<int>(rng.randint(1, 16));
        const int classes = static_cast<int>(rng.randint(2, 3));
        const double fg_prob = 0.05 + 0.9 * rng.uniform(0.0, 1.0) * rng.uniform(0.0, 1.0);
        auto rand_mask = [&]() {
            Mask m(h, w);
            for (auto& v : m.v)
                v = rng.bernoulli(fg_prob) ? static_cast<int32_t>(rng.randint(1, classes - 1))
                                           : 0;
            return m;
        };
        const Mask pred = rand_mask(), gt = rand_mask();
        preds.push_back(pred);
        gts.push_back(gt);
        ids.push_back(fmt("pair_%03d", it));

        const auto sd = metrics::surface_distances(pred, gt);
        const auto bp = metrics::boundary(pred);
        const auto bg = metrics::boundary(gt);
        const auto any = [](const std::vector<uint8_t>& v) {
            for (uint8_t x : v)
                if (x) return true;
            return false;
        };
        const bool defined = any(bp) && any(bg);
        defined_agree = defined_agree && (sd.defined == defined);
        if (!defined) continue;
        ++pairs_defined;

        // all-pairs brute force: integer min-square, then one sqrt
        std::vector<double> brute;
        auto side = [&](const std::vector<uint8_t>& from, const std::vector<uint8_t>& to) {
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    if (!from[static_cast<size_t>(y) * w + x]) continue;
                    long best = -1;
                    for (int v = 0; v < h; ++v)
                        for (int u = 0; u < w; ++u) {
                            if (!to[static_cast<size_t>(v) * w + u]) continue;
                            const long d2 = static_cast<long>(y - v) * (y - v) +
                                            static_cast<long>(x - u) * (x - u);
                            if (best < 0 || d2 < best) best = d2;
                        }
                    brute.push_back(std::sqrt(static_cast<double>(best)));
                }
        };
        side(bp, bg);
        side(bg, bp);
        std::sort(brute.begin(), brute.end());
        distances_exact = distances_exact && sd.d == brute &&
                          metrics::hd95(sd.d) == metrics::hd95(brute) &&
                          metrics::asd(sd.d) == metrics::asd(brute);
    }

    // percentile convention pin: rank 0.95*(n-1) with linear interpolation
    std::vector<double> ramp(20);
    for (int i = 0; i < 20; ++i) ramp[i] = i;
    const bool pct_ok = std::abs(metrics::hd95(ramp) - 18.05) <= 1e-12;

    const auto rep = metrics::evaluate_masks(preds, gts, ids, 3);
    double worst_identity = 0.0;
    for (const auto& s : rep.samples) {
        const double want = 200.0 * s.jaccard_pct / (100.0 + s.jaccard_pct);
        worst_identity = std::max(worst_identity, std::abs(s.dice_pct - want));
    }

    Outcome o;
    o.ok = distances_exact && defined_agree && pct_ok && worst_identity <= 1e-9;
    o.detail = fmt("metric oracle: 500 pairs (%ld with defined surfaces) EDT==brute %s, "
                   "hd95 convention %s, d=2j/(1+j) residual %.2e (limit 1e-9)",
                   pairs_defined, distances_exact && defined_agree ? "exactly" : "VIOLATED",
                   pct_ok ? "pinned" : "VIOLATED", worst_identity);
    return o;
}

// ---- criterion 5: dropout statistics ----------------------------------------

Outcome crit5() {
    Outcome o;
    double frac25 = 0.0, frac75 = 0.0;
    for (double rate : {0.25, 0.75}) {
        long zero = 0;
        for (int i = 0; i < 100; ++i) {  // 100 draws x 100 channels = 1e4
            Rng vr(substream(0xACC5, 1, static_cast<uint64_t>(i)));
            const Tensor f = testutil::random_tensor({1, 100, 3, 3}, vr, 0.5, 1.5, false);
            FeaturePerturbSpec spec{PerturbKind::channel_dropout, rate, true};
            Rng pr(substream(0xACC5, rate < 0.5 ? 2 : 3, static_cast<uint64_t>(i)));
            const Tensor out = perturb(f, spec, pr);
            for (int c = 0; c < 100; ++c) {
                bool all_zero = true;
                for (int k = 0; k < 9; ++k)
                    all_zero = all_zero && out.values()[static_cast<size_t>(c) * 9 + k] == 0.0;
                zero += all_zero;
            }
        }
        (rate < 0.5 ? frac25 : frac75) = static_cast<double>(zero) / 1e4;
    }

    // block-seed independence: paired channel bits from two blocks of the
    // same step, 2x2 contingency against the product of the marginals
    long n[2][2] = {{0, 0}, {0, 0}};
    const FeaturePerturbSpec spec{PerturbKind::channel_dropout, 0.25, true};
    for (uint64_t step = 0; step < 1250; ++step) {
        const uint64_t ss = substream(0xACC5, 7, step);
        Rng r0(block_seed(ss, 0)), r1(block_seed(ss, 1));
        const Tensor f = Tensor::full({1, 8, 1, 1}, 1.0, false);
        const Tensor o0 = perturb(f, spec, r0);
        const Tensor o1 = perturb(f, spec, r1);
        for (int c = 0; c < 8; ++c)
            ++n[o0.values()[c] == 0.0 ? 1 : 0][o1.values()[c] == 0.0 ? 1 : 0];
    }
    const double total = 1e4;
    const double pa = (n[1][0] + n[1][1]) / total, pb = (n[0][1] + n[1][1]) / total;
    double chi2 = 0.0;
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) {
            const double expct = total * (a ? pa : 1 - pa) * (b ? pb : 1 - pb);
            chi2 += (n[a][b] - expct) * (n[a][b] - expct) / expct;
        }
    const double kChi2Crit = 6.634896601;  // chi-square df=1, p=0.01

    o.ok = std::abs(frac25 - 0.25) <= 0.02 && std::abs(frac75 - 0.75) <= 0.02 &&
           chi2 < kChi2Crit;
    o.detail = fmt("dropout statistics: zero fraction %.4f@0.25 %.4f@0.75 (tol 0.02), "
                   "block independence chi2 %.3f (limit %.3f)",
                   frac25, frac75, chi2, kChi2Crit);
    return o;
}

// ---- criterion 6: desk-scale learning effect --------------------------------

Outcome crit6() {
    // Frozen desk-scale setup: 200 train / 50 val, 5% labeled, 2000 steps.
    SynthSpec tr;
    tr.count = 200;
    tr.height = 32;
    tr.width = 32;
    tr.seed = 100;
    tr.noise_sigma = 0.20;
    SynthSpec va = tr;
    va.count = 50;
    va.seed = 200;
    const auto val = synth_generate(va);

    TrainConfig base;
    base.iterations = 2000;
    base.batch_size = 8;
    base.eval_every = 0;
    base.checkpoint_every = 0;
    base.net.base_width = 8;
    base.net.depth = 3;
    base.split.labeled_fraction = 0.05;
    base.split.seed = 50;

    const std::vector<std::pair<std::string, Method>> methods = {
        {"supervised", Method::supervised_only},
        {"fixmatch", Method::fixmatch},
        {"crossmatch", Method::crossmatch},
    };
    double mean[3] = {0, 0, 0};
    double slowest = 0.0;
    bool budget_ok = true;
    for (size_t m = 0; m < methods.size(); ++m) {
        double per_method_sec = 0.0;
        for (uint64_t seed : {1ULL, 2ULL, 3ULL}) {
            TrainConfig cfg = base;
            cfg.method = methods[m].second;
            cfg.seed = seed;
            apply_method_preset(cfg);
            const auto train = synth_split(tr, cfg.split.labeled_fraction, cfg.split.seed);
            TrainState st(cfg);
            FitOptions opts;
            opts.val = &val;
            const auto t0 = std::chrono::steady_clock::now();
            const FitResult fr = fit(st, train, opts);
            const double sec =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            per_method_sec += sec;
            mean[m] += fr.final_val.mean_dice_pct / 3.0;
            std::fprintf(stderr, "  crit6: %s seed %llu dice %.2f (%.0fs)\n",
                         methods[m].first.c_str(), static_cast<unsigned long long>(seed),
                         fr.final_val.mean_dice_pct, sec);
        }
        budget_ok = budget_ok && per_method_sec <= 1800.0;
        slowest = std::max(slowest, per_method_sec);
    }

    Outcome o;
    const double vs_sup = mean[2] - mean[0];
    const double vs_fix = mean[2] - mean[1];
    o.ok = vs_sup >= 3.0 && vs_fix >= -0.5 && budget_ok;
    o.detail = fmt("desk-scale learning: crossmatch %.2f vs supervised %.2f (%+.2f, need >=+3) "
                   "vs fixmatch %.2f (%+.2f, need >=-0.5), slowest method %.0fs/1800s",
                   mean[2], mean[0], vs_sup, mean[1], vs_fix, slowest);
    return o;
}

// ---- criterion 7: ablation machinery ----------------------------------------

Outcome crit7() {
    TrainConfig base;
    base.net.base_width = 4;
    base.net.depth = 2;

    // (grid, expected row count, index of the full-configuration row)
    const std::vector<std::tuple<std::string, size_t, size_t>> tables = {
        {"dkd_components", 4, 3}, {"tkd_components", 7, 6}, {"ip_components", 4, 3},
        {"dkd_loss_type", 4, 3},  {"eta", 9, 4},            {"tau", 7, 4},
    };
    bool counts_ok = true, axes_ok = true, full_ok = true, degen_ok = true;
    for (const auto& [grid, want_rows, full_idx] : tables) {
        const auto rows = ablation_rows(grid, base);
        counts_ok = counts_ok && rows.size() == want_rows;
        if (rows.size() != want_rows) continue;
        for (const auto& r : rows) axes_ok = axes_ok && r.cfg.seed == base.seed;

        if (grid == "dkd_components") {
            axes_ok = axes_ok && rows[0].cfg.loss.dkd_terms.empty() &&
                      rows[1].cfg.loss.dkd_terms == std::set<std::string>{"w"} &&
                      rows[2].cfg.loss.dkd_terms == std::set<std::string>{"s"} &&
                      rows[3].cfg.loss.dkd_terms == std::set<std::string>{"w", "s"};
        } else if (grid == "tkd_components") {
            axes_ok = axes_ok &&
                      rows[0].cfg.loss.tkd_students == std::set<std::string>{"p_w_w", "p_s_s"} &&
                      rows[1].cfg.loss.tkd_students == std::set<std::string>{"p_s_w", "p_w_s"} &&
                      rows[6].cfg.loss.tkd_students ==
                          std::set<std::string>{"p_w_w", "p_s_w", "p_w_s", "p_s_s"};
        } else if (grid == "ip_components") {
            axes_ok = axes_ok && rows[0].cfg.loss.ip_streams.empty() &&
                      rows[3].cfg.loss.ip_streams == std::set<std::string>{"s1", "s2"};
        } else if (grid == "dkd_loss_type") {
            axes_ok = axes_ok && rows[0].cfg.loss.h_kind == HKind::kl &&
                      rows[0].cfg.loss.temperature == 1.0 && rows[1].cfg.loss.h_kind == HKind::kl &&
                      rows[1].cfg.loss.temperature == 2.0 && rows[2].cfg.loss.h_kind == HKind::ce &&
                      rows[3].cfg.loss.h_kind == HKind::dice;
        } else if (grid == "eta") {
            for (size_t i = 0; i < rows.size(); ++i)
                axes_ok = axes_ok &&
                          std::abs(rows[i].cfg.loss.eta - (0.10 + 0.05 * static_cast<double>(i))) <
                              1e-12;
        } else if (grid == "tau") {
            const std::vector<double> taus = {0.5, 0.6, 0.7, 0.8, 0.85, 0.9, 0.95};
            for (size_t i = 0; i < rows.size(); ++i)
                axes_ok = axes_ok && rows[i].cfg.loss.tau == taus[i];
        }

        // the full-configuration row must reproduce the untouched defaults
        const TrainConfig& fc = rows[full_idx].cfg;
        const LossConfig def;
        full_ok = full_ok && fc.loss.tkd_students == def.tkd_students &&
                  fc.loss.dkd_terms == def.dkd_terms && fc.loss.ip_streams == def.ip_streams &&
                  fc.loss.eta == def.eta && fc.loss.tau == def.tau &&
                  fc.loss.h_kind == def.h_kind;
        bool row_ok = true;
        degenerate_checks(fc.loss, &row_ok);
        degen_ok = degen_ok && row_ok;
    }

    Outcome o;
    o.ok = counts_ok && axes_ok && full_ok && degen_ok;
    o.detail = fmt("ablation machinery: 6 table grids rows 4/7/4/4/9/7 %s, axes %s, "
                   "full rows canonical %s and satisfy criterion 3 %s",
                   counts_ok ? "exact" : "VIOLATED", axes_ok ? "exact" : "VIOLATED",
                   full_ok ? "yes" : "NO", degen_ok ? "yes" : "NO");
    return o;
}

// ---- criterion 8: determinism ------------------------------------------------

Outcome crit8() {
    SynthSpec spec;
    spec.count = 12;
    spec.height = 16;
    spec.width = 16;
    spec.seed = 41;
    const auto train = synth_split(spec, 0.34, 3);
    SynthSpec vs = spec;
    vs.count = 4;
    vs.seed = 42;
    const auto val = synth_generate(vs);

    TrainConfig cfg;
    cfg.iterations = 20;
    cfg.batch_size = 4;
    cfg.seed = 9;
    cfg.eval_every = 10;
    cfg.checkpoint_every = 10;
    cfg.net.base_width = 4;
    cfg.net.depth = 2;
    cfg.optimizer.lr = 0.05;

    const std::string dir_a = "acceptance_run_a", dir_b = "acceptance_run_b";
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
    auto run = [&](const std::string& dir) {
        TrainState st(cfg);
        FitOptions opts;
        opts.out_dir = dir;
        opts.val = &val;
        FitResult fr = fit(st, train, opts);
        return std::make_pair(std::move(fr), flat_params(st));
    };
    const auto [fa, pa] = run(dir_a);
    const auto [fb, pb] = run(dir_b);

    bool replay_ok = pa == pb && fa.log.steps.size() == fb.log.steps.size() &&
                     fa.log.evals.size() == fb.log.evals.size();
    if (replay_ok)
        for (size_t i = 0; i < fa.log.steps.size(); ++i) {
            const auto& a = fa.log.steps[i];
            const auto& b = fb.log.steps[i];
            replay_ok = replay_ok && a.step == b.step && a.step_seed == b.step_seed &&
                        a.lr == b.lr && a.report.sup == b.report.sup &&
                        a.report.ip == b.report.ip && a.report.tkd == b.report.tkd &&
                        a.report.dkd == b.report.dkd && a.report.total == b.report.total &&
                        a.report.mask_coverage == b.report.mask_coverage;
        }
    if (replay_ok)
        for (size_t i = 0; i < fa.log.evals.size(); ++i) {
            const auto& a = fa.log.evals[i].report;
            const auto& b = fb.log.evals[i].report;
            replay_ok = replay_ok && a.mean_dice_pct == b.mean_dice_pct &&
                        a.mean_jaccard_pct == b.mean_jaccard_pct;
        }

    // byte-level check on the logged artifacts
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    replay_ok = replay_ok && slurp(fs::path(dir_a) / "losses.csv") ==
                                 slurp(fs::path(dir_b) / "losses.csv");

    TrainState resumed = load_state((fs::path(dir_a) / "ckpt_10").string(), &cfg);
    FitOptions ropts;
    ropts.val = &val;
    const FitResult ft = fit(resumed, train, ropts);
    bool resume_ok = flat_params(resumed) == pa && ft.log.steps.size() == 10;
    if (resume_ok)
        for (size_t i = 0; i < 10; ++i) {
            const auto& a = fa.log.steps[10 + i];
            const auto& b = ft.log.steps[i];
            resume_ok = resume_ok && a.step == b.step && a.step_seed == b.step_seed &&
                        a.report.total == b.report.total;
        }

    Outcome o;
    o.ok = replay_ok && resume_ok;
    o.detail = fmt("determinism: replay of 20-step run %s (RunLog and losses.csv bit-identical), "
                   "resume at step 10 %s the uninterrupted run",
                   replay_ok ? "matches" : "DIVERGES", resume_ok ? "equals" : "DIVERGES");
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> which;
    for (int i = 1; i < argc; ++i) which.insert(std::atoi(argv[i]));

    const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
        {1, crit1}, {2, crit2}, {3, crit3}, {4, crit4},
        {5, crit5}, {6, crit6}, {7, crit7}, {8, crit8},
    };
    int failures = 0;
    for (const auto& [id, fn] : criteria) {
        if (!which.empty() && !which.count(id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o.ok = false;
            o.detail = fmt("threw %s", e.what());
        }
        const double sec =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("[%s] criterion %d — %s (%.1fs)\n", o.ok ? "PASS" : "FAIL", id,
                    o.detail.c_str(), sec);
        std::fflush(stdout);
        failures += o.ok ? 0 : 1;
    }
    return failures;
}
