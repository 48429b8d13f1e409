#pragma once

#include "mmi/nn/param.hpp"

#include <json.hpp>

namespace mmi::nn {

template <class Scalar>
nlohmann::json params_to_json(const ParamList<Scalar>& params) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto* p : params) {
    std::vector<double> data(p->value.data(), p->value.data() + p->value.size());
    out[p->name] = {{"rows", p->value.rows()}, {"cols", p->value.cols()}, {"data", data}};
  }
  return out;
}

template <class Scalar>
void params_from_json(const ParamList<Scalar>& params, const nlohmann::json& in) {
  for (auto* p : params) {
    if (!in.contains(p->name)) throw DataError("checkpoint is missing parameter " + p->name);
    const auto& entry = in.at(p->name);
    const Index rows = entry.at("rows").template get<Index>();
    const Index cols = entry.at("cols").template get<Index>();
    if (rows != p->value.rows() || cols != p->value.cols())
      throw DataError("checkpoint parameter " + p->name + " has mismatched shape");
    const auto data = entry.at("data").template get<std::vector<double>>();
    if (static_cast<Index>(data.size()) != rows * cols) throw DataError("checkpoint parameter " + p->name + " is truncated");
    for (Index i = 0; i < rows * cols; ++i) p->value.data()[i] = static_cast<Scalar>(data[static_cast<std::size_t>(i)]);
    p->grad.setZero();
  }
}

}  // namespace mmi::nn
