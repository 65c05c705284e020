#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace fedpft {

// Which parts of the method are switched on. All flags on except
// personalized_classifier is the full method; all off is FedAvg.
struct AblationConfig {
  bool use_p_kappa = true;
  bool use_alternating = true;
  bool use_L_con = true;
  bool use_p_rho = true;
  bool personalized_classifier = false;

  bool operator==(const AblationConfig&) const = default;

  // Flag-wise subset test (this <= other).
  bool subset_of(const AblationConfig& other) const;
  std::string describe() const;
};

// Named settings I..VIII of the ablation matrix:
//   I    FedAvg (nothing)            V    + p_rho (full method)
//   II   + p_kappa                   VI   L_con only
//   III  + alternating training      VII  p_kappa + L_con
//   IV   + L_con                     VIII p_kappa + L_con + p_rho
AblationConfig ablation_setting(std::string_view name);
const std::vector<std::string>& ablation_setting_names();

}  // namespace fedpft
