// SPDX-License-Identifier: Apache-2.0
#include "crossmatch/losses.hpp"

#include <algorithm>
#include <cmath>

namespace crossmatch::losses {

using ad::Tensor;

namespace {

void dims4(const Tensor& t, long& b, long& c, long& h, long& w) {
    const auto& s = t.node()->shape;
    check_internal(s.size() == 4, "expected [B,C,H,W] logits");
    b = s[0];
    c = s[1];
    h = s[2];
    w = s[3];
}

bool all_zero(const std::vector<double>& m) {
    for (double v : m)
        if (v != 0.0) return false;
    return true;
}

Tensor zero_scalar() { return Tensor::scalar(0.0); }

// [B,H,W] -> [B,C,H,W] replication
std::vector<double> expand_mask(const std::vector<double>& mask, long b, long c, long h, long w) {
    std::vector<double> out(static_cast<size_t>(b) * c * h * w);
    const size_t plane = static_cast<size_t>(h) * w;
    for (long bi = 0; bi < b; ++bi)
        for (long ci = 0; ci < c; ++ci)
            std::copy(mask.begin() + bi * plane, mask.begin() + (bi + 1) * plane,
                      out.begin() + (static_cast<size_t>(bi) * c + ci) * plane);
    return out;
}

std::vector<int32_t> argmax_channel_vals(const std::vector<double>& v, long b, long c, long h,
                                         long w) {
    std::vector<int32_t> out(static_cast<size_t>(b) * h * w);
    const size_t plane = static_cast<size_t>(h) * w;
    for (long bi = 0; bi < b; ++bi)
        for (size_t px = 0; px < plane; ++px) {
            int best = 0;
            double bv = v[(static_cast<size_t>(bi) * c) * plane + px];
            for (long ci = 1; ci < c; ++ci) {
                const double cv = v[(static_cast<size_t>(bi) * c + ci) * plane + px];
                if (cv > bv) {
                    bv = cv;
                    best = static_cast<int>(ci);
                }
            }
            out[bi * plane + px] = best;
        }
    return out;
}

std::vector<double> onehot(const std::vector<int32_t>& labels, long b, long c, long h, long w) {
    std::vector<double> out(static_cast<size_t>(b) * c * h * w, 0.0);
    const size_t plane = static_cast<size_t>(h) * w;
    for (long bi = 0; bi < b; ++bi)
        for (size_t px = 0; px < plane; ++px) {
            const int32_t lab = labels[bi * plane + px];
            check_internal(lab >= 0 && lab < c, "label out of range");
            out[(static_cast<size_t>(bi) * c + lab) * plane + px] = 1.0;
        }
    return out;
}

// numerically stable channel log-softmax on constant values
std::vector<double> log_softmax_const(const std::vector<double>& v, long b, long c, long h, long w,
                                      double T) {
    std::vector<double> out(v.size());
    const size_t plane = static_cast<size_t>(h) * w;
    for (long bi = 0; bi < b; ++bi)
        for (size_t px = 0; px < plane; ++px) {
            double mx = -1e308;
            for (long ci = 0; ci < c; ++ci)
                mx = std::max(mx, v[(static_cast<size_t>(bi) * c + ci) * plane + px] / T);
            double se = 0.0;
            for (long ci = 0; ci < c; ++ci)
                se += std::exp(v[(static_cast<size_t>(bi) * c + ci) * plane + px] / T - mx);
            const double lse = mx + std::log(se);
            for (long ci = 0; ci < c; ++ci) {
                const size_t i = (static_cast<size_t>(bi) * c + ci) * plane + px;
                out[i] = v[i] / T - lse;
            }
        }
    return out;
}

std::vector<double> mask_from_teacher(const std::vector<double>& teacher_logits, long b, long c,
                                      long h, long w, double tau) {
    const auto logp = log_softmax_const(teacher_logits, b, c, h, w, 1.0);
    std::vector<double> mask(static_cast<size_t>(b) * h * w, 0.0);
    const size_t plane = static_cast<size_t>(h) * w;
    for (long bi = 0; bi < b; ++bi)
        for (size_t px = 0; px < plane; ++px) {
            double mx = 0.0;
            for (long ci = 0; ci < c; ++ci)
                mx = std::max(mx, std::exp(logp[(static_cast<size_t>(bi) * c + ci) * plane + px]));
            mask[bi * plane + px] = mx >= tau ? 1.0 : 0.0;
        }
    return mask;
}

std::vector<double> mixed_teacher(const Tensor& teacher, const std::vector<ViewMixInfo>& mix,
                                  const std::vector<long>& partner) {
    std::vector<double> out = teacher.values();
    if (mix.empty()) return out;
    long b, c, h, w;
    dims4(teacher, b, c, h, w);
    check_internal(static_cast<long>(mix.size()) == b && static_cast<long>(partner.size()) == b,
                   "mix info size does not match batch");
    const auto& src = teacher.values();
    const size_t plane = static_cast<size_t>(h) * w;
    for (long bi = 0; bi < b; ++bi) {
        if (!mix[bi].active) continue;
        const long pb = partner[bi];
        check_internal(pb >= 0 && pb < b, "cutmix partner index out of range");
        const auto& box = mix[bi];
        for (long ci = 0; ci < c; ++ci)
            for (int y = box.y0; y < box.y0 + box.bh; ++y)
                for (int x = box.x0; x < box.x0 + box.bw; ++x) {
                    const size_t off = static_cast<size_t>(y) * w + x;
                    out[(static_cast<size_t>(bi) * c + ci) * plane + off] =
                        src[(static_cast<size_t>(pb) * c + ci) * plane + off];
                }
    }
    return out;
}

Tensor mean_of(std::vector<Tensor> terms) {
    check_internal(!terms.empty(), "mean of zero terms");
    Tensor acc = terms[0];
    for (size_t i = 1; i < terms.size(); ++i) acc = ad::add(acc, terms[i]);
    return ad::mul_scalar(acc, 1.0 / static_cast<double>(terms.size()));
}

}  // namespace

Tensor softmax_probs(const Tensor& logits, double temperature) {
    check_config(temperature > 0.0, "softmax temperature must be > 0");
    return ad::softmax_channel(logits, temperature);
}

std::vector<double> confidence_mask(const Tensor& probs, double tau) {
    long b, c, h, w;
    dims4(probs, b, c, h, w);
    const auto& v = probs.values();
    std::vector<double> mask(static_cast<size_t>(b) * h * w, 0.0);
    const size_t plane = static_cast<size_t>(h) * w;
    for (long bi = 0; bi < b; ++bi)
        for (size_t px = 0; px < plane; ++px) {
            double mx = 0.0;
            for (long ci = 0; ci < c; ++ci)
                mx = std::max(mx, v[(static_cast<size_t>(bi) * c + ci) * plane + px]);
            mask[bi * plane + px] = mx >= tau ? 1.0 : 0.0;
        }
    return mask;
}

double coverage(const std::vector<double>& mask) {
    if (mask.empty()) return 0.0;
    double s = 0.0;
    for (double v : mask) s += v;
    return s / static_cast<double>(mask.size());
}

Tensor soft_dice_loss(const Tensor& probs, const std::vector<double>& target_onehot,
                      const std::vector<double>& mask, double smooth) {
    long b, c, h, w;
    dims4(probs, b, c, h, w);
    check_internal(target_onehot.size() == probs.node()->numel(), "dice target size");
    check_internal(mask.size() == static_cast<size_t>(b) * h * w, "dice mask size");
    if (all_zero(mask)) return zero_scalar();

    const std::vector<double> mask_e = expand_mask(mask, b, c, h, w);
    std::vector<double> tm(target_onehot.size());
    for (size_t i = 0; i < tm.size(); ++i) tm[i] = target_onehot[i] * mask_e[i];

    const size_t plane = static_cast<size_t>(h) * w;
    std::vector<double> target_mass(c, smooth);
    for (long bi = 0; bi < b; ++bi)
        for (long ci = 0; ci < c; ++ci)
            for (size_t px = 0; px < plane; ++px)
                target_mass[ci] += tm[(static_cast<size_t>(bi) * c + ci) * plane + px];

    const std::vector<double> zeros(tm.size(), 0.0);
    Tensor num = ad::add_scalar(
        ad::mul_scalar(ad::sum_over_bhw(ad::scale_shift(probs, tm, zeros)), 2.0), smooth);
    Tensor den = ad::scale_shift(ad::sum_over_bhw(ad::scale_shift(probs, mask_e, zeros)),
                                 std::vector<double>(c, 1.0), std::move(target_mass));
    Tensor ratio = ad::div(num, den);
    return ad::add_scalar(ad::mul_scalar(ad::mean_all(ratio), -1.0), 1.0);
}

Tensor masked_ce_loss(const Tensor& logits, const std::vector<int32_t>& target,
                      const std::vector<double>& mask) {
    long b, c, h, w;
    dims4(logits, b, c, h, w);
    check_internal(target.size() == static_cast<size_t>(b) * h * w, "ce target size");
    check_internal(mask.size() == target.size(), "ce mask size");
    double m_count = 0.0;
    for (double v : mask) m_count += v;
    if (m_count == 0.0) return zero_scalar();

    const size_t plane = static_cast<size_t>(h) * w;
    std::vector<double> weight(logits.node()->numel(), 0.0);
    for (long bi = 0; bi < b; ++bi)
        for (size_t px = 0; px < plane; ++px) {
            const int32_t lab = target[bi * plane + px];
            check_internal(lab >= 0 && lab < c, "ce label out of range");
            weight[(static_cast<size_t>(bi) * c + lab) * plane + px] =
                -mask[bi * plane + px] / m_count;
        }
    Tensor logp = ad::log_softmax_channel(logits, 1.0);
    return ad::sum_all(ad::scale_shift(logp, std::move(weight),
                                       std::vector<double>(logits.node()->numel(), 0.0)));
}

Tensor kd_kl_loss(const std::vector<double>& teacher_logits, const Tensor& student_logits,
                  double temperature, const std::vector<double>& mask) {
    check_config(temperature > 0.0, "kd temperature must be > 0");
    long b, c, h, w;
    dims4(student_logits, b, c, h, w);
    check_internal(teacher_logits.size() == student_logits.node()->numel(), "teacher size");
    double m_count = 0.0;
    for (double v : mask) m_count += v;
    if (m_count == 0.0) return zero_scalar();

    const auto logpt = log_softmax_const(teacher_logits, b, c, h, w, temperature);
    const std::vector<double> mask_e = expand_mask(mask, b, c, h, w);
    const size_t n = logpt.size();

    // KL(t||s): constant sum(pt*logpt) minus cross term with student log-probs
    double const_part = 0.0;
    std::vector<double> wneg(n, 0.0);
    for (size_t i = 0; i < n; ++i) {
        const double pt = std::exp(logpt[i]);
        const double wm = mask_e[i] / m_count;
        const_part += pt * logpt[i] * wm;
        wneg[i] = -pt * wm;
    }
    Tensor ls = ad::log_softmax_channel(student_logits, temperature);
    Tensor kl_ts = ad::add_scalar(
        ad::sum_all(ad::scale_shift(ls, std::move(wneg), std::vector<double>(n, 0.0))), const_part);

    // KL(s||t): sum ps*(ls - logpt) over masked pixels
    Tensor ps = ad::softmax_channel(student_logits, temperature);
    std::vector<double> neg_logpt(n);
    for (size_t i = 0; i < n; ++i) neg_logpt[i] = -logpt[i];
    Tensor inner = ad::mul(ps, ad::scale_shift(ls, std::vector<double>(n, 1.0), std::move(neg_logpt)));
    std::vector<double> wm(n);
    for (size_t i = 0; i < n; ++i) wm[i] = mask_e[i] / m_count;
    Tensor kl_st = ad::sum_all(ad::scale_shift(inner, std::move(wm), std::vector<double>(n, 0.0)));

    // clamp float dust: the true value is >= 0 with zero slope at equality
    return ad::relu(ad::mul_scalar(ad::add(kl_ts, kl_st), 0.5));
}

Tensor h_loss(const std::vector<double>& teacher_logits, const Tensor& student_logits,
              const std::vector<double>& mask, const LossConfig& cfg) {
    long b, c, h, w;
    dims4(student_logits, b, c, h, w);
    check_internal(teacher_logits.size() == student_logits.node()->numel(),
                   "teacher/student shape mismatch");
    switch (cfg.h_kind) {
        case HKind::dice: {
            const auto labels = argmax_channel_vals(teacher_logits, b, c, h, w);
            return soft_dice_loss(ad::softmax_channel(student_logits, 1.0),
                                  onehot(labels, b, c, h, w), mask, cfg.dice_smooth);
        }
        case HKind::ce: {
            const auto labels = argmax_channel_vals(teacher_logits, b, c, h, w);
            return masked_ce_loss(student_logits, labels, mask);
        }
        case HKind::kl:
            return kd_kl_loss(teacher_logits, student_logits, cfg.temperature, mask);
    }
    check_config(false, "unknown h_kind");
    return zero_scalar();
}

Tensor supervised_loss(const Tensor& logits, const std::vector<Mask>& gt, const LossConfig& cfg) {
    long b, c, h, w;
    dims4(logits, b, c, h, w);
    check_data(static_cast<long>(gt.size()) == b, "one ground-truth mask per sample required");
    std::vector<int32_t> labels;
    labels.reserve(static_cast<size_t>(b) * h * w);
    for (const Mask& m : gt) {
        check_data(m.h == h && m.w == w, "ground truth spatial shape mismatch");
        labels.insert(labels.end(), m.v.begin(), m.v.end());
    }
    for (int32_t lab : labels) check_data(lab >= 0 && lab < c, "ground truth class out of range");

    const std::vector<double> full(static_cast<size_t>(b) * h * w, 1.0);
    Tensor ce = masked_ce_loss(logits, labels, full);
    Tensor dice = soft_dice_loss(ad::softmax_channel(logits, 1.0), onehot(labels, b, c, h, w), full,
                                 cfg.dice_smooth);
    return ad::mul_scalar(ad::add(ce, dice), 0.5);
}

namespace {

struct StudentRef {
    const char* name;
    const Tensor* logits;
    bool strong_encoder;  // fed from x_s2
};

}  // namespace

TermResult tkd_loss(const StreamSet& streams, const LossConfig& cfg,
                    const UnlabeledMixing& mixing) {
    TermResult res;
    if (cfg.tkd_students.empty()) {
        res.loss = zero_scalar();
        return res;
    }
    long b, c, h, w;
    dims4(streams.p_w_n, b, c, h, w);
    const std::vector<double> teacher_plain = streams.p_w_n.values();
    const std::vector<double> teacher_mix_s2 =
        mixed_teacher(streams.p_w_n, mixing.s2, mixing.partner);

    const StudentRef table[] = {{"p_w_w", &streams.p_w_w, false},
                                {"p_w_s", &streams.p_w_s, false},
                                {"p_s_w", &streams.p_s_w, true},
                                {"p_s_s", &streams.p_s_s, true}};
    std::vector<Tensor> terms;
    for (const auto& st : table) {
        if (!cfg.tkd_students.count(st.name)) continue;
        const auto& teacher = st.strong_encoder ? teacher_mix_s2 : teacher_plain;
        const auto mask = mask_from_teacher(teacher, b, c, h, w, cfg.tau);
        res.coverage[std::string("tkd:") + st.name] = coverage(mask);
        terms.push_back(h_loss(teacher, *st.logits, mask, cfg));
    }
    check_internal(terms.size() == cfg.tkd_students.size(), "unknown tkd student name");
    res.loss = mean_of(std::move(terms));
    return res;
}

TermResult dkd_loss(const StreamSet& streams, const LossConfig& cfg,
                    const UnlabeledMixing& mixing) {
    TermResult res;
    if (cfg.dkd_terms.empty()) {
        res.loss = zero_scalar();
        return res;
    }
    long b, c, h, w;
    dims4(streams.p_w_n, b, c, h, w);
    std::vector<Tensor> terms;
    size_t used = 0;
    for (const char* j : {"w", "s"}) {
        if (!cfg.dkd_terms.count(j)) continue;
        ++used;
        const Tensor& teacher_t = std::string(j) == "w" ? streams.p_w_w : streams.p_w_s;
        const Tensor& student = std::string(j) == "w" ? streams.p_s_w : streams.p_s_s;
        const auto teacher = mixed_teacher(teacher_t, mixing.s2, mixing.partner);
        const auto mask = mask_from_teacher(teacher, b, c, h, w, cfg.tau);
        res.coverage[std::string("dkd:") + j] = coverage(mask);
        terms.push_back(h_loss(teacher, student, mask, cfg));
    }
    check_internal(used == cfg.dkd_terms.size(), "unknown dkd term name");
    res.loss = mean_of(std::move(terms));
    return res;
}

TermResult ip_loss(const StreamSet& streams, const LossConfig& cfg,
                   const UnlabeledMixing& mixing) {
    TermResult res;
    if (cfg.ip_streams.empty()) {
        res.loss = zero_scalar();
        return res;
    }
    long b, c, h, w;
    dims4(streams.p_w_n, b, c, h, w);
    LossConfig dice_cfg = cfg;  // the image-perturbation term is always Dice-form
    dice_cfg.h_kind = HKind::dice;
    std::vector<Tensor> terms;
    size_t used = 0;
    for (const char* s : {"s1", "s2"}) {
        if (!cfg.ip_streams.count(s)) continue;
        ++used;
        const bool first = std::string(s) == "s1";
        const auto teacher = mixed_teacher(streams.p_w_n, first ? mixing.s1 : mixing.s2,
                                           mixing.partner);
        const auto mask = mask_from_teacher(teacher, b, c, h, w, cfg.tau);
        res.coverage[std::string("ip:") + s] = coverage(mask);
        terms.push_back(h_loss(teacher, first ? streams.p_s1 : streams.p_s2, mask, dice_cfg));
    }
    check_internal(used == cfg.ip_streams.size(), "unknown ip stream name");
    res.loss = mean_of(std::move(terms));
    return res;
}

std::pair<Tensor, LossReport> total_loss(const Tensor& sup, const TermResult& ip,
                                         const TermResult& tkd, const TermResult& dkd, double eta) {
    check_config(eta >= 0.0 && eta <= 1.0, "eta must be in [0,1]");
    Tensor total = ad::add(ad::add(sup, ip.loss),
                           ad::add(ad::mul_scalar(tkd.loss, 1.0 - eta),
                                   ad::mul_scalar(dkd.loss, eta)));
    LossReport rep;
    rep.sup = sup.item();
    rep.ip = ip.loss.item();
    rep.tkd = tkd.loss.item();
    rep.dkd = dkd.loss.item();
    rep.total = total.item();
    for (const auto& kv : ip.coverage) rep.mask_coverage[kv.first] = kv.second;
    for (const auto& kv : tkd.coverage) rep.mask_coverage[kv.first] = kv.second;
    for (const auto& kv : dkd.coverage) rep.mask_coverage[kv.first] = kv.second;
    return {total, rep};
}

}  // namespace crossmatch::losses
