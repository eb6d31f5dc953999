#pragma once

#include <vector>

namespace hydrolimit {

// Least-squares line through (ln x, ln y).
struct RateFit {
    std::vector<double> xs, ys;
    double exponent = 0.0;
    double log_constant = 0.0;
    double ci_low = 0.0, ci_high = 0.0;  // 95% interval on the exponent
    double residual = 0.0;                // rms of log residuals
    double relative_residual = 0.0;       // max |y - fit| / y
};

// Needs >= 3 strictly positive pairs with distinct xs (Domain error otherwise).
RateFit fit_rate(const std::vector<double>& xs, const std::vector<double>& ys);

// Two-sided Student t quantile at 97.5% for the given degrees of freedom.
double student_t975(int dof);

}  // namespace hydrolimit
