#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "efd/config.hpp"

namespace efd {

// Analytic parameter / multiply-accumulate accounting for a ModelConfig.
// Convention (stated in every report): MACs count one forward pass of a
// single sample; a matmul (m x k)(k x n) is m*k*n MACs; elementwise work is
// 1 per element, layer norm 5 per element, softmax 2 per logit. Flops are
// reported as 2*MACs.
struct CostRow {
    std::string name;
    std::int64_t params = 0;
    std::int64_t macs = 0;
};

struct CostReport {
    std::vector<CostRow> rows;
    std::int64_t total_params = 0;
    std::int64_t total_macs = 0;
    std::string convention;

    std::int64_t params_matching(const std::string& prefix) const;
    std::int64_t macs_matching(const std::string& prefix) const;
};

inline std::int64_t affine_params(std::int64_t in, std::int64_t out) { return in * out + out; }
inline std::int64_t matmul_macs(std::int64_t m, std::int64_t k, std::int64_t n) {
    return m * k * n;
}

CostReport count_params_and_macs(const ModelConfig& cfg);

std::string cost_report_text(const CostReport& r);
std::string cost_report_json(const CostReport& r);

}  // namespace efd
