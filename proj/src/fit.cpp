#include "lvs/fit.hpp"

#include <sstream>

namespace lvs {

void FitConfig::validate() const {
  if (steps < 0) throw DimError("FitConfig: steps must be >= 0");
  if (!(lr > 0.0)) throw DimError("FitConfig: lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw DimError("FitConfig: betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw DimError("FitConfig: eps must be > 0");
  if (!(l1_weight > 0.0)) throw DimError("FitConfig: l1_weight must be > 0");
  if (!(depth_lr_scale > 0.0)) throw DimError("FitConfig: depth_lr_scale must be > 0");
}

std::string to_csv(const FitReport& report) {
  std::ostringstream os;
  os.precision(17);
  os << "kind,index,value\n";
  for (size_t i = 0; i < report.loss_curve.size(); ++i)
    os << "loss," << i << "," << report.loss_curve[i] << "\n";
  for (size_t i = 0; i < report.view_psnr.size(); ++i)
    os << "psnr," << i << "," << report.view_psnr[i] << "\n";
  os << "wall,0," << report.wall_seconds << "\n";
  return os.str();
}

}  // namespace lvs
