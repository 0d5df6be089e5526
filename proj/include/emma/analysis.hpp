#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "emma/adapter.hpp"
#include "emma/encoder.hpp"
#include "emma/world.hpp"

namespace emma {

double digamma(double x);

// Kraskov-type k-nearest-neighbour mutual information estimate (variant 1),
// in nats, with Chebyshev distances and ties broken by sample index. Clamped
// at zero. Throws EstimationError for fewer than 50 samples, k outside
// [1, n), mismatched lengths, or an input with zero spread.
double estimate_mi_ksg(const std::vector<std::vector<double>>& xs,
                       const std::vector<std::vector<double>>& ys, int k);

// Mean-pooled visual-side representation of each sample: the raw tap output
// when adapter is null, otherwise the adapter's output under the sample's
// instruction.
std::vector<std::vector<double>> pooled_visual_representations(
    const EncoderStackF& stack, const AdapterF* adapter, const std::vector<Sample>& samples,
    LayerTap tap);

// Response representation per sample: the frozen text tower's pooled encoding
// of the answer word.
std::vector<std::vector<double>> response_representations(const EncoderStackF& stack,
                                                          const World& world,
                                                          const std::vector<Sample>& samples);

// Fingerprint of a parameter list (names, shapes, raw bytes, in order).
std::uint64_t params_digest(const std::vector<std::pair<std::string, TensorF>>& params);

struct MiEstimate {
    double mi_nats = 0.0;
    int k = 0;
    int n = 0;
};

struct MiComparison {
    MiEstimate adapted;
    MiEstimate raw;
    MiEstimate adapted_shuffled;  // response labels permuted: should be ~0
    MiEstimate raw_shuffled;
    std::vector<double> adapted_chunks;  // per-chunk estimates for the figure
    std::vector<double> raw_chunks;
};

// Mutual information between visual-side representations and the response,
// with and without the adapter, plus a label-shuffle control. The two stacks
// must hold identical encoder parameters (ContractError otherwise); passing
// the same stack twice is the common case. Representations are standardized
// per dimension (an MI-invariant change that keeps the estimator's max-norm
// balanced between the two spaces regardless of adapter scale) and carry
// deterministic sub-resolution jitter to break ties between the repeated
// response prototypes.
MiComparison compare_mi(const EncoderStackF& stack_adapted, const AdapterF& adapter,
                        const EncoderStackF& stack_raw, const World& world,
                        const std::vector<Sample>& samples, int k, LayerTap tap,
                        std::uint64_t shuffle_seed, int chunks = 8);

struct PairDistance {
    int pair_id = 0;
    double pre_l2 = 0.0;
    double post_l2 = 0.0;
};

struct DistanceShiftReport {
    std::vector<PairDistance> rows;
    double mean_pre = 0.0;
    double mean_post = 0.0;
    double shift = 0.0;  // mean_post - mean_pre
};

// Pooled-representation distance between the two members of each confusable
// pair (at least 2), before (raw tap output) and after the adapter. An
// identity-initialized adapter leaves every distance exactly unchanged.
DistanceShiftReport distance_shift(const EncoderStackF& stack, const AdapterF& adapter,
                                   const World& world, int num_pairs, LayerTap tap);

struct AttributionRow {
    int token_index = 0;
    bool is_text = false;
    double l1_norm = 0.0;
};

// Per-input-token contribution mass of the linear mixer: the l1 norm of each
// row of W. Rows 0..n-1 are visual tokens, rows n..n+m-1 instruction tokens.
std::vector<AttributionRow> attribution_rows(const AdapterF& adapter);

std::string attribution_to_csv(const std::vector<AttributionRow>& rows);
std::string mi_to_csv(const MiComparison& mi);
std::string distances_to_csv(const std::vector<PairDistance>& rows);

}  // namespace emma
