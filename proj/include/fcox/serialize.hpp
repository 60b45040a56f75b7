#pragma once

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <fstream>
#include <string>
#include <vector>

#include "fcox/ace.hpp"
#include "fcox/error.hpp"
#include "fcox/gcv.hpp"
#include "fcox/pcox.hpp"
#include "fcox/sim.hpp"
#include "fcox/survival_data.hpp"

namespace fcox {

using json = nlohmann::json;

namespace detail {

inline json to_array(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline json to_rows(const Eigen::MatrixXd& M) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < M.rows(); ++r) rows.push_back(to_array(M.row(r).transpose()));
  return rows;
}

inline Eigen::VectorXd from_array(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot open for writing: " + path);
  out << text;
}

}  // namespace detail

// --- FittedModel ------------------------------------------------------------

inline json to_json(const FittedModel& m) {
  return json{{"theta", detail::to_array(m.coef.theta)},
              {"d", detail::to_array(m.coef.d)},
              {"c_beta", detail::to_array(m.coef.c_beta)},
              {"basis_index", m.basis_index},
              {"basis_mode", to_string(m.mode)},
              {"order", m.order},
              {"lambda", m.lambda},
              {"grid", detail::to_array(m.grid.points())},
              {"beta_on_grid", detail::to_array(m.beta_on_grid)},
              {"neg_loglik", m.neg_loglik},
              {"iterations", m.iterations},
              {"converged", m.converged}};
}

/// Rebuild a model from JSON; basis curves come from `centered` at basis_index.
inline FittedModel model_from_json(const json& j, const Dataset& centered) {
  try {
    FittedModel m;
    m.coef.theta = detail::from_array(j.at("theta"));
    m.coef.d = detail::from_array(j.at("d"));
    m.coef.c_beta = detail::from_array(j.at("c_beta"));
    m.basis_index = j.at("basis_index").get<std::vector<Eigen::Index>>();
    const auto mode = j.value("basis_mode", std::string("reduced"));
    m.mode = mode == "full" ? BasisMode::Full : mode == "explicit" ? BasisMode::Explicit : BasisMode::Reduced;
    m.order = j.value("order", 2);
    m.lambda = j.at("lambda").get<double>();
    m.grid = Grid(detail::from_array(j.at("grid")));
    m.beta_on_grid = detail::from_array(j.at("beta_on_grid"));
    m.neg_loglik = j.at("neg_loglik").get<double>();
    m.iterations = j.at("iterations").get<int>();
    m.converged = j.at("converged").get<bool>();
    if (!(m.grid == centered.grid())) throw ParseError("model grid does not match the data grid", -1);
    if (m.coef.theta.size() != centered.p()) throw ParseError("model theta length does not match the data", -1);
    if (static_cast<Eigen::Index>(m.basis_index.size()) != m.coef.c_beta.size())
      throw ParseError("basis_index and c_beta lengths differ", -1);
    m.basis_curves.resize(m.coef.c_beta.size(), centered.grid().size());
    for (std::size_t k = 0; k < m.basis_index.size(); ++k) {
      const auto i = m.basis_index[k];
      if (i < 0 || i >= centered.n()) throw ParseError("basis index out of range for this data", -1);
      m.basis_curves.row(static_cast<Eigen::Index>(k)) = centered.X().row(i);
    }
    return m;
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed model JSON: ") + e.what(), -1);
  } catch (const InvalidArgument& e) {
    throw ParseError(std::string("malformed model JSON: ") + e.what(), -1);
  }
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("file not found: " + path, -1);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what(), -1);
  }
}

inline void write_json_file(const std::string& path, const json& j) { detail::write_text(path, j.dump(2) + "\n"); }

// --- curves and tables ---------------------------------------------------------

/// s, beta_hat[, lower, upper]
inline std::string beta_curve_csv(const Grid& grid, const Eigen::VectorXd& beta, const BootstrapBand* band = nullptr) {
  std::string out = band ? "s,beta_hat,lower,upper\n" : "s,beta_hat\n";
  for (Eigen::Index a = 0; a < grid.size(); ++a) {
    out += detail::format_double(grid[a]) + "," + detail::format_double(beta(a));
    if (band) out += "," + detail::format_double(band->lower(a)) + "," + detail::format_double(band->upper(a));
    out += "\n";
  }
  return out;
}

inline std::string gcv_csv(const GcvResult& r) {
  std::string out = "lambda,score\n";
  for (std::size_t k = 0; k < r.lambdas.size(); ++k)
    out += detail::format_double(r.lambdas[k]) + "," +
           (std::isfinite(r.scores[k]) ? detail::format_double(r.scores[k]) : std::string("inf")) + "\n";
  return out;
}

inline json to_json(const GcvResult& r) {
  json scores = json::array();
  for (double s : r.scores) scores.push_back(std::isfinite(s) ? json(s) : json(nullptr));
  return json{{"lambdas", r.lambdas}, {"scores", scores}, {"best_lambda", r.best_lambda}, {"best_index", r.best_index}};
}

inline json to_json(const AceResult& a) {
  json paths = json::array();
  for (const auto& p : a.objective) paths.push_back(p);
  return json{{"times", detail::to_array(a.times)},
              {"a_star", detail::to_rows(a.a_star.transpose())},
              {"g_star", detail::to_rows(a.g_star.transpose())},
              {"info", detail::to_rows(a.info)},
              {"objective_path", paths},
              {"iterations", a.iterations},
              {"ridge", a.ridge}};
}

inline json to_json(const ThetaInference& t) {
  return json{{"theta_hat", detail::to_array(t.theta_hat)},
              {"std_err", detail::to_array(t.std_err)},
              {"ci_low", detail::to_array(t.ci_low)},
              {"ci_high", detail::to_array(t.ci_high)},
              {"level", t.level}};
}

inline std::string band_csv(const Grid& grid, const Eigen::VectorXd& beta, const BootstrapBand& band) {
  return beta_curve_csv(grid, beta, &band);
}

// --- simulation reports ---------------------------------------------------------

inline std::string report_csv(const SimReport& rep) {
  std::string out =
      "v,n,h0,gamma,reps,failures,failed,mean_mse,sd_mse,mean_theta,sd_theta,coverage,ci_failures,censoring,"
      "mean_lambda\n";
  for (const auto& c : rep.cells) {
    out += detail::format_double(c.cfg.v) + "," + std::to_string(c.cfg.n) + "," + to_string(c.cfg.h0) + "," +
           detail::format_double(c.cfg.gamma) + "," + std::to_string(c.reps) + "," + std::to_string(c.failures) + "," +
           (c.failed ? "1" : "0") + "," + detail::format_double(c.mean_mse) + "," + detail::format_double(c.sd_mse) +
           "," + detail::format_double(c.mean_theta) + "," + detail::format_double(c.sd_theta) + "," +
           detail::format_double(c.coverage) + "," + std::to_string(c.ci_failures) + "," +
           detail::format_double(c.censoring) + "," + detail::format_double(c.mean_lambda) + "\n";
  }
  return out;
}

inline std::string replicates_csv(const SimReport& rep) {
  std::string out = "v,n,h0,gamma,rep,ok,mse,theta,lambda,censoring,ci_low,ci_high,covered\n";
  for (const auto& c : rep.cells)
    for (std::size_t r = 0; r < c.replicates.size(); ++r) {
      const auto& x = c.replicates[r];
      out += detail::format_double(c.cfg.v) + "," + std::to_string(c.cfg.n) + "," + to_string(c.cfg.h0) + "," +
             detail::format_double(c.cfg.gamma) + "," + std::to_string(r) + "," + (x.ok ? "1" : "0") + "," +
             detail::format_double(x.mse) + "," + detail::format_double(x.theta) + "," +
             detail::format_double(x.lambda) + "," + detail::format_double(x.censoring) + "," +
             (x.ci_ok ? detail::format_double(x.ci_low) : "") + "," + (x.ci_ok ? detail::format_double(x.ci_high) : "") +
             "," + (x.ci_ok ? (x.covered ? "1" : "0") : "") + "\n";
    }
  return out;
}

inline json to_json(const SimReport& rep) {
  json cells = json::array();
  for (const auto& c : rep.cells)
    cells.push_back(json{{"v", c.cfg.v},
                         {"n", c.cfg.n},
                         {"h0", to_string(c.cfg.h0)},
                         {"h0_const", c.cfg.h0_const},
                         {"gamma", c.cfg.gamma},
                         {"theta0", c.cfg.theta0},
                         {"seed", c.cfg.seed},
                         {"reps", c.reps},
                         {"failures", c.failures},
                         {"failed", c.failed},
                         {"mean_mse", c.mean_mse},
                         {"sd_mse", c.sd_mse},
                         {"mean_theta", c.mean_theta},
                         {"sd_theta", c.sd_theta},
                         {"coverage", c.coverage},
                         {"ci_failures", c.ci_failures},
                         {"censoring", c.censoring},
                         {"mean_lambda", c.mean_lambda}});
  return json{{"cells", cells}};
}

}  // namespace fcox
