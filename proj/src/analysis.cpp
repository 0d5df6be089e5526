#include "emma/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>

#include "emma/config.hpp"
#include "emma/digest.hpp"
#include "emma/errors.hpp"

namespace emma {
namespace {

constexpr std::uint64_t kShuffleStream = 0x50FF1E;
constexpr std::uint64_t kJitterXStream = 0x117E8A;
constexpr std::uint64_t kJitterYStream = 0x117E8B;

// Magnitude of the tie-breaking noise added after standardization: far above
// double rounding, far below any structure in unit-variance data.
constexpr double kJitterScale = 1e-8;

// Chebyshev distance between two equal-length rows.
double linf(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

void check_rows(const std::vector<std::vector<double>>& rows, const char* which) {
    if (rows.empty()) return;
    const std::size_t width = rows.front().size();
    if (width == 0) throw EstimationError(std::string(which) + " rows have zero width");
    for (const auto& r : rows)
        if (r.size() != width)
            throw EstimationError(std::string(which) + " rows have inconsistent widths (" +
                                  std::to_string(r.size()) + " vs " + std::to_string(width) + ")");
}

bool has_spread(const std::vector<std::vector<double>>& rows) {
    for (std::size_t i = 1; i < rows.size(); ++i)
        if (linf(rows[0], rows[i]) > 0.0) return true;
    return false;
}

std::vector<double> pooled_row(const TensorF& tokens) {
    TensorF pooled = mean_pool_rows(static_cast<TapeF*>(nullptr), tokens);
    std::vector<double> out(pooled.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(pooled.data()[i]);
    return out;
}

double pooled_l2(const TensorF& a, const TensorF& b) {
    const std::vector<double> ra = pooled_row(a);
    const std::vector<double> rb = pooled_row(b);
    double s = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        const double diff = ra[i] - rb[i];
        s += diff * diff;
    }
    return std::sqrt(s);
}

MiEstimate estimate(const std::vector<std::vector<double>>& xs,
                    const std::vector<std::vector<double>>& ys, int k) {
    MiEstimate e;
    e.mi_nats = estimate_mi_ksg(xs, ys, k);
    e.k = k;
    e.n = static_cast<int>(xs.size());
    return e;
}

// Shifts and scales every column to zero mean, unit variance. Mutual
// information is invariant under per-coordinate affine maps, but the
// estimator's max-norm joint distances are not: an unstandardized space with
// much larger spread starves the other marginal. Constant columns are left
// centered.
void standardize_columns(std::vector<std::vector<double>>& rows) {
    if (rows.empty()) return;
    const double n = static_cast<double>(rows.size());
    for (std::size_t col = 0; col < rows.front().size(); ++col) {
        double mean = 0.0;
        for (const auto& r : rows) mean += r[col];
        mean /= n;
        double var = 0.0;
        for (const auto& r : rows) {
            const double d = r[col] - mean;
            var += d * d;
        }
        var /= n;
        const double scale = var > 0.0 ? 1.0 / std::sqrt(var) : 1.0;
        for (auto& r : rows) r[col] = (r[col] - mean) * scale;
    }
}

// Deterministic sub-resolution noise that separates duplicate rows (the
// response side holds one prototype per answer class) without moving distinct
// points relative to each other — the usual k-NN-estimator treatment for
// repeated values.
void add_jitter(std::vector<std::vector<double>>& rows, std::uint64_t seed) {
    SplitMix64 rng(seed);
    for (auto& r : rows)
        for (double& v : r) v += kJitterScale * rng.next_normal();
}

std::vector<std::vector<double>> permuted(const std::vector<std::vector<double>>& rows,
                                          std::uint64_t seed) {
    std::vector<std::size_t> order(rows.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    SplitMix64 rng(SplitMix64::derive(seed, kShuffleStream));
    for (std::size_t i = order.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.next_below(static_cast<std::uint64_t>(i)));
        std::swap(order[i - 1], order[j]);
    }
    std::vector<std::vector<double>> out(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) out[i] = rows[order[i]];
    return out;
}

}  // namespace

double digamma(double x) {
    if (!(x > 0.0)) throw EstimationError("digamma requires a positive argument, got " +
                                          std::to_string(x));
    double result = 0.0;
    while (x < 10.0) {      // recurrence up to the asymptotic region
        result -= 1.0 / x;
        x += 1.0;
    }
    const double inv = 1.0 / x;
    const double u = inv * inv;
    result += std::log(x) - 0.5 * inv -
              u * (1.0 / 12.0 -
                   u * (1.0 / 120.0 -
                        u * (1.0 / 252.0 -
                             u * (1.0 / 240.0 -
                                  u * (1.0 / 132.0 - u * (691.0 / 32760.0 - u / 12.0))))));
    return result;
}

double estimate_mi_ksg(const std::vector<std::vector<double>>& xs,
                       const std::vector<std::vector<double>>& ys, int k) {
    const std::size_t n = xs.size();
    if (ys.size() != n)
        throw EstimationError("mutual information needs paired samples, got " +
                              std::to_string(n) + " vs " + std::to_string(ys.size()));
    if (n < 50)
        throw EstimationError("mutual information needs at least 50 samples, got " +
                              std::to_string(n));
    if (k < 1 || static_cast<std::size_t>(k) >= n)
        throw EstimationError("neighbour count k must lie in [1, " + std::to_string(n) +
                              "), got " + std::to_string(k));
    check_rows(xs, "first input");
    check_rows(ys, "second input");
    if (!has_spread(xs) || !has_spread(ys))
        throw EstimationError("mutual information is undefined for an input with zero spread");

    // Chebyshev distances per marginal space, computed one query row at a
    // time; the joint distance is their maximum.
    double psi_sum = 0.0;
    std::vector<double> dxi(n), dyi(n);
    std::vector<std::pair<double, std::size_t>> order(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t w = 0;
        for (std::size_t j = 0; j < n; ++j) {
            dxi[j] = linf(xs[i], xs[j]);
            dyi[j] = linf(ys[i], ys[j]);
            if (j != i) order[w++] = {std::max(dxi[j], dyi[j]), j};
        }
        // k-th nearest joint neighbour, ties broken by sample index.
        std::nth_element(order.begin(), order.begin() + (k - 1), order.end());
        const double eps = order[static_cast<std::size_t>(k - 1)].first;

        std::size_t nx = 0, ny = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            if (dxi[j] < eps) ++nx;
            if (dyi[j] < eps) ++ny;
        }
        psi_sum += digamma(static_cast<double>(nx) + 1.0) + digamma(static_cast<double>(ny) + 1.0);
    }

    const double mi = digamma(static_cast<double>(k)) + digamma(static_cast<double>(n)) -
                      psi_sum / static_cast<double>(n);
    return std::max(0.0, mi);
}

std::vector<std::vector<double>> pooled_visual_representations(
    const EncoderStackF& stack, const AdapterF* adapter, const std::vector<Sample>& samples,
    LayerTap tap) {
    std::vector<std::vector<double>> out;
    out.reserve(samples.size());
    for (const Sample& s : samples) {
        TensorF v = stack.encode_image(nullptr, s.patches, tap);
        if (adapter && adapter->kind() != AdapterKind::none) {
            TextEncodingF enc = stack.encode_text(nullptr, s.instruction, LayerTap::final);
            v = adapter->adapt(nullptr, v, enc.tokens);
        }
        out.push_back(pooled_row(v));
    }
    return out;
}

std::vector<std::vector<double>> response_representations(const EncoderStackF& stack,
                                                          const World& world,
                                                          const std::vector<Sample>& samples) {
    // One embedding per answer class, computed once; samples then index them.
    const int classes = world.config().num_answers();
    std::vector<std::vector<double>> per_class(static_cast<std::size_t>(classes));
    for (int c = 0; c < classes; ++c) {
        TensorF e = stack.embed_text(nullptr, {world.answer_word(c)});
        std::vector<double>& row = per_class[static_cast<std::size_t>(c)];
        row.resize(e.data().size());
        for (std::size_t i = 0; i < row.size(); ++i) row[i] = static_cast<double>(e.data()[i]);
    }
    std::vector<std::vector<double>> out;
    out.reserve(samples.size());
    for (const Sample& s : samples) {
        if (s.answer < 0 || s.answer >= classes)
            throw InputError("sample answer class " + std::to_string(s.answer) + " outside [0, " +
                             std::to_string(classes) + ")");
        out.push_back(per_class[static_cast<std::size_t>(s.answer)]);
    }
    return out;
}

std::uint64_t params_digest(const std::vector<std::pair<std::string, TensorF>>& params) {
    std::vector<unsigned char> buf;
    for (const auto& [name, p] : params) {
        put_string(buf, name);
        put_u32(buf, static_cast<std::uint32_t>(p.shape().size()));
        for (int extent : p.shape()) put_u32(buf, static_cast<std::uint32_t>(extent));
        for (float v : p.data()) put_f32(buf, v);
    }
    return fnv1a64(buf.data(), buf.size());
}

MiComparison compare_mi(const EncoderStackF& stack_adapted, const AdapterF& adapter,
                        const EncoderStackF& stack_raw, const World& world,
                        const std::vector<Sample>& samples, int k, LayerTap tap,
                        std::uint64_t shuffle_seed, int chunks) {
    if (params_digest(stack_adapted.named_params("enc")) !=
        params_digest(stack_raw.named_params("enc")))
        throw ContractError(
            "mutual-information comparison requires both stacks to hold identical encoder "
            "parameters");
    if (chunks < 0) throw ConfigError("chunk count must be non-negative");

    std::vector<std::vector<double>> xs_adapted =
        pooled_visual_representations(stack_adapted, &adapter, samples, tap);
    std::vector<std::vector<double>> xs_raw =
        pooled_visual_representations(stack_raw, nullptr, samples, tap);
    std::vector<std::vector<double>> ys = response_representations(stack_raw, world, samples);

    // Both visual sides get the same jitter stream, so an adapter that is
    // still the identity yields bitwise-equal adapted and raw estimates.
    standardize_columns(xs_adapted);
    standardize_columns(xs_raw);
    standardize_columns(ys);
    add_jitter(xs_adapted, SplitMix64::derive(shuffle_seed, kJitterXStream));
    add_jitter(xs_raw, SplitMix64::derive(shuffle_seed, kJitterXStream));
    add_jitter(ys, SplitMix64::derive(shuffle_seed, kJitterYStream));
    const std::vector<std::vector<double>> ys_shuffled = permuted(ys, shuffle_seed);

    MiComparison cmp;
    cmp.adapted = estimate(xs_adapted, ys, k);
    cmp.raw = estimate(xs_raw, ys, k);
    cmp.adapted_shuffled = estimate(xs_adapted, ys_shuffled, k);
    cmp.raw_shuffled = estimate(xs_raw, ys_shuffled, k);

    // Per-chunk estimates over contiguous blocks, for spread in the figure.
    // Chunks smaller than the estimator's minimum are not attempted.
    const std::size_t n = samples.size();
    std::size_t chunk_count = static_cast<std::size_t>(chunks);
    if (chunk_count > 0) chunk_count = std::min(chunk_count, n / 50);
    if (chunk_count >= 2) {
        const std::size_t size = n / chunk_count;
        for (std::size_t c = 0; c < chunk_count; ++c) {
            const std::size_t begin = c * size;
            auto slice = [&](const std::vector<std::vector<double>>& rows) {
                return std::vector<std::vector<double>>(
                    rows.begin() + static_cast<std::ptrdiff_t>(begin),
                    rows.begin() + static_cast<std::ptrdiff_t>(begin + size));
            };
            cmp.adapted_chunks.push_back(estimate_mi_ksg(slice(xs_adapted), slice(ys), k));
            cmp.raw_chunks.push_back(estimate_mi_ksg(slice(xs_raw), slice(ys), k));
        }
    }
    return cmp;
}

DistanceShiftReport distance_shift(const EncoderStackF& stack, const AdapterF& adapter,
                                   const World& world, int num_pairs, LayerTap tap) {
    if (num_pairs < 2)
        throw ConfigError("distance shift needs at least 2 pairs, got " +
                          std::to_string(num_pairs));
    DistanceShiftReport report;
    report.rows.reserve(static_cast<std::size_t>(num_pairs));
    for (int i = 0; i < num_pairs; ++i) {
        const ConfusablePair pair = world.make_confusable_pair(i);
        const TensorF va = stack.encode_image(nullptr, pair.first.patches, tap);
        const TensorF vb = stack.encode_image(nullptr, pair.second.patches, tap);
        PairDistance row;
        row.pair_id = i;
        row.pre_l2 = pooled_l2(va, vb);
        if (adapter.kind() == AdapterKind::none) {
            row.post_l2 = row.pre_l2;
        } else {
            // Both members share the instruction by construction.
            const TextEncodingF enc =
                stack.encode_text(nullptr, pair.first.instruction, LayerTap::final);
            row.post_l2 = pooled_l2(adapter.adapt(nullptr, va, enc.tokens),
                                    adapter.adapt(nullptr, vb, enc.tokens));
        }
        report.mean_pre += row.pre_l2;
        report.mean_post += row.post_l2;
        report.rows.push_back(row);
    }
    report.mean_pre /= num_pairs;
    report.mean_post /= num_pairs;
    report.shift = report.mean_post - report.mean_pre;
    return report;
}

std::vector<AttributionRow> attribution_rows(const AdapterF& adapter) {
    const TensorF& w = adapter.alignment_weights();  // throws unless linear
    const int n = adapter.n();
    std::vector<AttributionRow> rows;
    rows.reserve(static_cast<std::size_t>(w.rows()));
    for (int i = 0; i < w.rows(); ++i) {
        AttributionRow row;
        row.token_index = i;
        row.is_text = i >= n;
        double l1 = 0.0;
        for (int j = 0; j < w.cols(); ++j) l1 += std::abs(static_cast<double>(w.at(i, j)));
        row.l1_norm = l1;
        rows.push_back(row);
    }
    return rows;
}

std::string attribution_to_csv(const std::vector<AttributionRow>& rows) {
    std::ostringstream os;
    os << "token_index,is_text,l1_norm\n";
    for (const AttributionRow& r : rows)
        os << r.token_index << ',' << (r.is_text ? 1 : 0) << ',' << format_number(r.l1_norm)
           << '\n';
    return os.str();
}

std::string mi_to_csv(const MiComparison& mi) {
    std::ostringstream os;
    os << "set,kind,mi_nats,k,n\n";
    auto line = [&os](const std::string& set, const std::string& kind, const MiEstimate& e) {
        os << set << ',' << kind << ',' << format_number(e.mi_nats) << ',' << e.k << ',' << e.n
           << '\n';
    };
    line("full", "adapted", mi.adapted);
    line("full", "raw", mi.raw);
    line("full", "adapted_shuffled", mi.adapted_shuffled);
    line("full", "raw_shuffled", mi.raw_shuffled);
    const int chunk_n = mi.adapted_chunks.empty()
                            ? 0
                            : mi.adapted.n / static_cast<int>(mi.adapted_chunks.size());
    for (std::size_t c = 0; c < mi.adapted_chunks.size(); ++c) {
        MiEstimate e{mi.adapted_chunks[c], mi.adapted.k, chunk_n};
        line("chunk" + std::to_string(c), "adapted", e);
        e.mi_nats = mi.raw_chunks[c];
        line("chunk" + std::to_string(c), "raw", e);
    }
    return os.str();
}

std::string distances_to_csv(const std::vector<PairDistance>& rows) {
    std::ostringstream os;
    os << "pair_id,pre_l2,post_l2\n";
    for (const PairDistance& r : rows)
        os << r.pair_id << ',' << format_number(r.pre_l2) << ',' << format_number(r.post_l2)
           << '\n';
    return os.str();
}

}  // namespace emma
