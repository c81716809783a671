#pragma once

#include "mvi/io/formats.hpp"
#include "mvi/mvindex.hpp"

namespace mvi::io {

// Report JSON with keys in the documented order and 9 significant digits.
inline ordered_json to_json(const MVReport& r) {
  ordered_json j;
  j["k"] = sig9(r.k);
  j["area_mm2"] = sig9(r.area_mm2);
  j["mc_total"] = r.mc_total;
  j["mc_kept"] = r.mc_kept;
  j["vv_percent_mean"] = sig9(r.vv_mean);
  j["vv_percent_std"] = sig9(r.vv_std);
  j["mv_mean"] = sig9(r.mv_mean);
  j["mv_std"] = sig9(r.mv_std);
  j["mv_whole_roi"] = sig9(r.mv_whole_roi);
  j["det_threshold"] = sig9(r.det_threshold_used);
  j["fields"] = ordered_json::array();
  for (const auto& f : r.fields) {
    ordered_json fj;
    fj["index"] = f.index;
    fj["mc"] = f.mc;
    fj["vv_percent"] = sig9(f.vv_percent);
    fj["mv"] = f.mv ? ordered_json(sig9(*f.mv)) : ordered_json(nullptr);
    j["fields"].push_back(std::move(fj));
  }
  return j;
}

}  // namespace mvi::io
