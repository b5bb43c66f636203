#ifndef OAAG_VERIFY_HPP
#define OAAG_VERIFY_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace oaag {

// One entry of the self-check suite. `observed` carries the measured quantity
// the threshold in `detail` applies to, so reports can show the margin.
struct CheckResult {
    std::string name;
    bool pass = false;
    double observed = 0.0;
    std::string detail;
};

// Finite differences against the analytic gradient of the full two-head loss
// on a two-sample toy batch, dynamic fusion, 64-bit mode.
CheckResult check_joint_gradient(std::uint64_t seed);

// The same treatment per stage: encoder/co-attention, review self-match, and
// a full decode step, each behind a probe-weighted scalar loss.
std::vector<CheckResult> check_module_gradients(std::uint64_t seed);

// Random forward passes asserting every attention vector and output
// distribution sums to one and padded slots stay at exactly zero.
CheckResult check_normalization_sweep(std::uint64_t seed, int passes = 1000);

// Copy-attention re-weighting identities: the worked 4-word example, uniform
// review weights collapsing to no fusion, and single-review dynamic fusion
// collapsing to no fusion.
CheckResult check_fusion_identities();

// Ranked retrieval equals straight-line Okapi scoring (stable tie order) on
// random corpora.
CheckResult check_bm25_oracle(std::uint64_t seed, int corpora = 200);

// Text metrics against hand points and an exhaustive subsequence search.
CheckResult check_metric_oracles(std::uint64_t seed);

// A deliberately mis-scaled backward rule must be caught by the gradient
// check, and restoring it must pass again.
CheckResult check_gradient_sensitivity(std::uint64_t seed);

// Everything above, in fixed order.
std::vector<CheckResult> run_verification(std::uint64_t seed);

}  // namespace oaag

#endif
