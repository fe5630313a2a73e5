#include "mvbcf/pipeline.hpp"

#include "json_fields.hpp"
#include "mvbcf/csv.hpp"
#include "mvbcf/format.hpp"
#include "mvbcf/stats.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace mvbcf {

namespace fs = std::filesystem;
using detail::bad;
using detail::Fields;

// ---------------------------------------------------------------- config

AnalysisConfig::AnalysisConfig() {
  propensity.num_trees = 50;
  propensity.iterations = 1000;
  propensity.burn_in = 500;
}

std::vector<std::string> AnalysisConfig::components() const {
  if (!component_names.empty()) return component_names;
  return outcome_groups.empty() ? std::vector<std::string>{} : outcome_groups.front();
}

void AnalysisConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::Configuration, msg); };
  if (data_path.empty()) fail("data path is empty");
  if (outcome_groups.empty()) fail("no outcome groups");
  const std::size_t p = outcome_groups.front().size();
  if (p == 0) fail("outcome group 1 lists no columns");
  for (std::size_t g = 0; g < outcome_groups.size(); ++g) {
    if (outcome_groups[g].size() != p) {
      fail("outcome group " + std::to_string(g + 1) + " has " + std::to_string(outcome_groups[g].size()) +
           " columns, group 1 has " + std::to_string(p));
    }
  }
  if (!component_names.empty() && component_names.size() != p) {
    fail("component_names must list " + std::to_string(p) + " names");
  }
  if (treatments.size() != 1 && treatments.size() != p) {
    fail("treatments must name one column or " + std::to_string(p));
  }
  if (covariates.empty()) fail("no covariates");
  std::set<std::string> names;
  for (const CovariateSpec& c : covariates) {
    if (!names.insert(c.name).second) fail("covariate '" + c.name + "' listed twice");
  }
  if (chains_per_group < 1) fail("chains_per_group must be at least 1");
  if (grid_size < 2) fail("grid_size must be at least 2");
  if (max_units < 1) fail("max_units must be at least 1");
  if (use_propensity) propensity.validate();
}

AnalysisConfig analysis_config_from_json(const Json& j, const fs::path& base_dir) {
  AnalysisConfig c;
  Fields f(j, "");
  auto strings = [&](const Json& v, const std::string& key) {
    if (!v.is_array()) bad(key, "expected an array of column names");
    std::vector<std::string> out;
    for (const Json& e : v) {
      if (!e.is_string()) bad(key, "expected an array of column names");
      out.push_back(e.get<std::string>());
    }
    return out;
  };
  f.get("data", c.data_path);
  if (!c.data_path.empty() && !base_dir.empty() && fs::path(c.data_path).is_relative()) {
    c.data_path = (base_dir / c.data_path).lexically_normal().string();
  }
  if (const Json* v = f.find("outcome_groups")) {
    if (!v->is_array()) bad("outcome_groups", "expected an array of column arrays");
    for (const Json& g : *v) c.outcome_groups.push_back(strings(g, "outcome_groups"));
  }
  if (const Json* v = f.find("component_names")) c.component_names = strings(*v, "component_names");
  if (const Json* v = f.find("treatments")) {
    c.treatments = v->is_string() ? std::vector<std::string>{v->get<std::string>()} : strings(*v, "treatments");
  }
  if (const Json* v = f.find("covariates")) {
    if (!v->is_array()) bad("covariates", "expected an array");
    for (const Json& e : *v) {
      CovariateSpec spec;
      if (e.is_string()) {
        spec.name = e.get<std::string>();
      } else {
        Fields g(e, "covariates");
        std::string type = "numeric";
        g.get("name", spec.name);
        g.get("type", type);
        if (type == "categorical") {
          spec.type = CovariateType::Categorical;
        } else if (type != "numeric") {
          bad("covariates." + spec.name, "type must be numeric or categorical");
        }
      }
      if (spec.name.empty()) bad("covariates", "covariate without a name");
      c.covariates.push_back(spec);
    }
  }
  if (const Json* v = f.find("weight")) {
    if (v->is_string()) {
      c.weight = v->get<std::string>();
    } else if (!v->is_null()) {
      bad("weight", "expected a column name or null");
    }
  }
  f.get("use_propensity", c.use_propensity);
  if (const Json* v = f.find("propensity")) c.propensity = bart_config_from_json(*v, c.propensity, "propensity");
  if (const Json* v = f.find("causal")) c.causal = causal_config_from_json(*v, c.causal, "causal");
  f.get("chains_per_group", c.chains_per_group);
  f.get("output_dir", c.output_dir);
  f.get("grid_size", c.grid_size);
  f.get("max_units", c.max_units);
  return c;
}

Json to_json(const AnalysisConfig& c) {
  Json covariates = Json::array();
  for (const CovariateSpec& s : c.covariates) {
    covariates.push_back({{"name", s.name}, {"type", s.type == CovariateType::Numeric ? "numeric" : "categorical"}});
  }
  return {{"data", c.data_path},
          {"outcome_groups", c.outcome_groups},
          {"component_names", c.component_names},
          {"treatments", c.treatments},
          {"covariates", covariates},
          {"weight", c.weight ? Json(*c.weight) : Json(nullptr)},
          {"use_propensity", c.use_propensity},
          {"propensity", to_json(c.propensity)},
          {"causal", to_json(c.causal)},
          {"chains_per_group", c.chains_per_group},
          {"output_dir", c.output_dir},
          {"grid_size", c.grid_size},
          {"max_units", c.max_units}};
}

AnalysisConfig load_analysis_config(const fs::path& path) {
  AnalysisConfig c = analysis_config_from_json(read_json_file(path.string()), path.parent_path());
  c.validate();
  return c;
}

// ---------------------------------------------------------------- loading

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

std::optional<double> to_number(std::string_view text) {
  text = trim(text);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  double value = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size() || text.empty()) return std::nullopt;
  return value;
}

double parse_cell(const std::string& text, int row, const std::string& column) {
  const auto v = to_number(text);
  if (!v || !std::isfinite(*v)) {
    throw Error(ErrorKind::Parse, "row " + std::to_string(row) + ", column '" + column + "': '" + text +
                                      "' is not a number");
  }
  return *v;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size();
  return m % 2 ? v[m / 2] : 0.5 * (v[m / 2 - 1] + v[m / 2]);
}

Matrix expand_treatments(const Matrix& T, int p) {
  if (T.cols() == p) return T;
  return T.col(0).replicate(1, p);
}

}  // namespace

CausalDataset AnalysisData::group(int g) const {
  CausalDataset d;
  d.X = X;
  d.Y = outcomes.at(static_cast<std::size_t>(g));
  d.Z = Z;
  d.weights = weights;
  return d;
}

AnalysisData load_csv(std::istream& in, const AnalysisConfig& config) {
  config.validate();
  const CsvTable table = read_csv(in);
  auto index = [&](const std::string& name) {
    const int c = table.column(name);
    if (c < 0) throw Error(ErrorKind::Column, "missing column '" + name + "'");
    return c;
  };
  const int p = config.p();
  const int q = static_cast<int>(config.treatments.size());
  std::vector<std::vector<int>> outcome_cols;
  for (const auto& group : config.outcome_groups) {
    std::vector<int> cols;
    for (const std::string& name : group) cols.push_back(index(name));
    outcome_cols.push_back(cols);
  }
  std::vector<int> treat_cols;
  for (const std::string& name : config.treatments) treat_cols.push_back(index(name));
  const int weight_col = config.weight ? index(*config.weight) : -1;
  std::vector<int> cov_cols;
  for (const CovariateSpec& s : config.covariates) cov_cols.push_back(index(s.name));

  AnalysisData out;
  out.rows_read = static_cast<int>(table.rows.size());
  std::vector<std::size_t> kept;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    bool missing = false;
    for (const auto& cols : outcome_cols) {
      for (int c : cols) missing = missing || is_missing(row[c]);
    }
    for (int c : treat_cols) missing = missing || is_missing(row[c]);
    if (missing) continue;
    kept.push_back(r);
  }
  out.rows_dropped = out.rows_read - static_cast<int>(kept.size());
  const auto n = static_cast<Eigen::Index>(kept.size());
  if (n == 0) throw Error(ErrorKind::EmptyInput, "no rows left after dropping missing outcomes or treatments");

  out.outcomes.assign(outcome_cols.size(), Matrix(n, p));
  out.T.resize(n, q);
  out.weights = Vector::Ones(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::size_t r = kept[static_cast<std::size_t>(i)];
    const int row_no = static_cast<int>(r) + 1;
    const auto& row = table.rows[r];
    out.source_rows.push_back(row_no);
    for (std::size_t g = 0; g < outcome_cols.size(); ++g) {
      for (int k = 0; k < p; ++k) {
        out.outcomes[g](i, k) = parse_cell(row[outcome_cols[g][k]], row_no, table.header[outcome_cols[g][k]]);
      }
    }
    for (int k = 0; k < q; ++k) {
      const double z = parse_cell(row[treat_cols[k]], row_no, config.treatments[k]);
      if (z != 0.0 && z != 1.0) {
        throw Error(ErrorKind::Parse, "row " + std::to_string(row_no) + ", column '" + config.treatments[k] +
                                          "': treatment must be 0 or 1");
      }
      out.T(i, k) = z;
    }
    if (weight_col >= 0) {
      if (is_missing(row[weight_col])) {
        throw Error(ErrorKind::Weight, "row " + std::to_string(row_no) + ": missing weight");
      }
      const double w = parse_cell(row[weight_col], row_no, *config.weight);
      if (!(w > 0.0)) {
        throw Error(ErrorKind::Weight, "row " + std::to_string(row_no) + ": weight must be positive");
      }
      out.weights(i) = w;
    }
  }
  out.Z = expand_treatments(out.T, p);

  std::vector<Vector> blocks;
  for (std::size_t c = 0; c < config.covariates.size(); ++c) {
    const CovariateSpec& spec = config.covariates[c];
    const int col = cov_cols[c];
    if (spec.type == CovariateType::Numeric) {
      Vector values(n);
      std::vector<double> observed;
      std::vector<bool> absent(static_cast<std::size_t>(n), false);
      for (Eigen::Index i = 0; i < n; ++i) {
        const std::string& cell = table.rows[kept[static_cast<std::size_t>(i)]][col];
        if (is_missing(cell)) {
          absent[static_cast<std::size_t>(i)] = true;
          continue;
        }
        values(i) = parse_cell(cell, out.source_rows[static_cast<std::size_t>(i)], spec.name);
        observed.push_back(values(i));
      }
      if (observed.empty()) throw Error(ErrorKind::Column, "column '" + spec.name + "' has no observed values");
      out.columns.push_back({spec.name, spec.name, EncodedColumn::Kind::Numeric, ""});
      if (observed.size() == static_cast<std::size_t>(n)) {
        blocks.push_back(values);
        continue;
      }
      const double fill = median(observed);
      Vector indicator = Vector::Zero(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        if (absent[static_cast<std::size_t>(i)]) {
          values(i) = fill;
          indicator(i) = 1.0;
        }
      }
      blocks.push_back(values);
      blocks.push_back(indicator);
      out.columns.push_back({spec.name + "_missing", spec.name, EncodedColumn::Kind::MissingIndicator, ""});
    } else {
      std::vector<std::string> cells(static_cast<std::size_t>(n));
      std::set<std::string> levels;
      for (Eigen::Index i = 0; i < n; ++i) {
        const std::string& cell = table.rows[kept[static_cast<std::size_t>(i)]][col];
        cells[static_cast<std::size_t>(i)] = is_missing(cell) ? "missing" : std::string(trim(cell));
        levels.insert(cells[static_cast<std::size_t>(i)]);
      }
      for (const std::string& level : levels) {
        Vector indicator(n);
        for (Eigen::Index i = 0; i < n; ++i) indicator(i) = cells[static_cast<std::size_t>(i)] == level ? 1.0 : 0.0;
        blocks.push_back(indicator);
        out.columns.push_back({spec.name + "=" + level, spec.name, EncodedColumn::Kind::Level, level});
      }
    }
  }
  out.X.resize(n, static_cast<Eigen::Index>(blocks.size()));
  for (std::size_t c = 0; c < blocks.size(); ++c) out.X.col(static_cast<Eigen::Index>(c)) = blocks[c];
  return out;
}

AnalysisData load_csv(const fs::path& path, const AnalysisConfig& config) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "'");
  return load_csv(in, config);
}

// ---------------------------------------------------------------- ATE and pooling

AteReport weighted_ate(const CausalDraws& draws, const Vector& weights) {
  if (weights.size() != draws.n) {
    throw Error(ErrorKind::Shape, "weights have length " + std::to_string(weights.size()) + ", expected " +
                                      std::to_string(draws.n));
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < weights.size(); ++i) {
    if (!(weights(i) > 0.0) || !std::isfinite(weights(i))) {
      throw Error(ErrorKind::Weight, "weight of unit " + std::to_string(i + 1) + " is not positive");
    }
    total += weights(i);
  }
  if (draws.draws.empty()) throw Error(ErrorKind::EmptyInput, "no posterior draws");
  const Vector share = weights / total;

  AteReport out;
  out.p = draws.p;
  const auto m = static_cast<Eigen::Index>(draws.draws.size());
  out.draws.resize(m, draws.p);
  for (Eigen::Index d = 0; d < m; ++d) {
    const CausalDraw& draw = draws.draws[static_cast<std::size_t>(d)];
    for (int k = 0; k < draws.p; ++k) {
      double sum = 0.0;
      for (Eigen::Index i = 0; i < draws.n; ++i) sum += share(i) * draw.tau_hat(i, k);
      out.draws(d, k) = sum;
    }
    out.chain.push_back(draw.chain);
    out.iteration.push_back(draw.iteration);
  }
  out.mean.resize(draws.p);
  out.lower.resize(draws.p);
  out.upper.resize(draws.p);
  for (int k = 0; k < draws.p; ++k) {
    std::vector<double> col(out.draws.col(k).data(), out.draws.col(k).data() + m);
    double sum = 0.0;
    for (double v : col) sum += v;
    out.mean(k) = sum / static_cast<double>(m);
    std::sort(col.begin(), col.end());
    out.lower(k) = quantile_sorted(col, 0.025);
    out.upper(k) = quantile_sorted(col, 0.975);
  }
  return out;
}

CausalDraws pool_chains(const std::vector<CausalDraws>& chains) {
  if (chains.empty()) throw Error(ErrorKind::Pooling, "no chains to pool");
  const CausalDraws& ref = chains.front();
  auto iterations = [](const CausalDraws& c) {
    std::vector<int> it;
    for (const CausalDraw& d : c.draws) it.push_back(d.iteration);
    return it;
  };
  const std::vector<int> ref_iterations = iterations(ref);
  CausalDraws out;
  out.n = ref.n;
  out.p = ref.p;
  out.layout = ref.layout;
  std::set<int> ids;
  for (std::size_t c = 0; c < chains.size(); ++c) {
    const CausalDraws& ch = chains[c];
    const std::string which = "chain " + std::to_string(c + 1);
    if (ch.n != ref.n || ch.p != ref.p) throw Error(ErrorKind::Pooling, which + " has a different n or p");
    if (ch.layout.num_x != ref.layout.num_x || ch.layout.num_pi != ref.layout.num_pi ||
        ch.layout.mu_columns != ref.layout.mu_columns || ch.layout.tau_columns != ref.layout.tau_columns) {
      throw Error(ErrorKind::Pooling, which + " has a different covariate layout");
    }
    if (iterations(ch) != ref_iterations) {
      throw Error(ErrorKind::Pooling, which + " kept different iterations");
    }
    for (const ChainInfo& info : ch.chains) {
      if (!ids.insert(info.id).second) {
        throw Error(ErrorKind::Pooling, "chain id " + std::to_string(info.id) + " appears twice");
      }
      out.chains.push_back(info);
    }
    out.draws.insert(out.draws.end(), ch.draws.begin(), ch.draws.end());
  }
  return out;
}

// ---------------------------------------------------------------- moderation

namespace {

ModerationCurve ice_curves(const CausalDraws& draws, const Matrix& X, const std::vector<int>& units,
                           std::size_t grid_points, const std::function<void(Matrix&, std::size_t)>& set) {
  const auto u = static_cast<Eigen::Index>(units.size());
  if (u == 0) throw Error(ErrorKind::EmptyInput, "no units for moderation curves");
  if (draws.draws.empty()) throw Error(ErrorKind::EmptyInput, "no posterior draws");
  Matrix base(u, X.cols());
  for (Eigen::Index r = 0; r < u; ++r) {
    const int row = units[static_cast<std::size_t>(r)];
    if (row < 0 || row >= X.rows()) throw Error(ErrorKind::Shape, "unit index out of range");
    base.row(r) = X.row(row);
  }
  ModerationCurve out;
  out.units = units;
  const auto gp = static_cast<Eigen::Index>(grid_points);
  out.ice.assign(static_cast<std::size_t>(draws.p), Matrix(u, gp));
  out.pdp.resize(gp, draws.p);
  const double m = static_cast<double>(draws.draws.size());
  for (std::size_t g = 0; g < grid_points; ++g) {
    Matrix Xg = base;
    set(Xg, g);
    const std::vector<Matrix> tau = predict_tau(draws, Xg);
    for (int k = 0; k < draws.p; ++k) {
      for (Eigen::Index r = 0; r < u; ++r) {
        double sum = 0.0;
        for (const Matrix& t : tau) sum += t(r, k);
        out.ice[static_cast<std::size_t>(k)](r, static_cast<Eigen::Index>(g)) = sum / m;
      }
      double sum = 0.0;
      for (Eigen::Index r = 0; r < u; ++r) sum += out.ice[static_cast<std::size_t>(k)](r, static_cast<Eigen::Index>(g));
      out.pdp(static_cast<Eigen::Index>(g), k) = sum / static_cast<double>(u);
    }
  }
  return out;
}

}  // namespace

std::vector<double> numeric_grid(const Matrix& X, int column, int size) {
  if (column < 0 || column >= X.cols()) throw Error(ErrorKind::Column, "grid column out of range");
  if (size < 2) throw Error(ErrorKind::InvalidParameter, "grid size must be at least 2");
  const double lo = X.col(column).minCoeff();
  const double hi = X.col(column).maxCoeff();
  if (lo == hi) return {lo};
  std::vector<double> grid(static_cast<std::size_t>(size));
  for (int g = 0; g < size; ++g) grid[static_cast<std::size_t>(g)] = lo + (hi - lo) * g / (size - 1);
  grid.back() = hi;
  return grid;
}

ModerationCurve moderation_curves(const CausalDraws& draws, const Matrix& X, int column,
                                  const std::vector<double>& grid, const std::vector<int>& units) {
  if (column < 0 || column >= X.cols()) throw Error(ErrorKind::Column, "moderation column out of range");
  if (grid.empty()) throw Error(ErrorKind::InvalidParameter, "empty grid");
  ModerationCurve out = ice_curves(draws, X, units, grid.size(),
                                   [&](Matrix& Xg, std::size_t g) { Xg.col(column).setConstant(grid[g]); });
  out.grid = grid;
  for (double g : grid) out.labels.push_back(format_number(g));
  return out;
}

ModerationCurve moderation_curves(const CausalDraws& draws, const Matrix& X,
                                  const std::vector<EncodedColumn>& columns, const std::string& covariate,
                                  int grid_size, int max_units, Rng& rng) {
  if (static_cast<Eigen::Index>(columns.size()) != X.cols()) {
    throw Error(ErrorKind::Shape, "column descriptions do not match the covariate matrix");
  }
  if (max_units < 1) throw Error(ErrorKind::InvalidParameter, "max_units must be at least 1");
  std::vector<int> units(static_cast<std::size_t>(X.rows()));
  for (std::size_t i = 0; i < units.size(); ++i) units[i] = static_cast<int>(i);
  if (units.size() > static_cast<std::size_t>(max_units)) {
    for (std::size_t i = 0; i < static_cast<std::size_t>(max_units); ++i) {
      std::swap(units[i], units[i + rng.index(units.size() - i)]);
    }
    units.resize(static_cast<std::size_t>(max_units));
    std::sort(units.begin(), units.end());
  }

  for (std::size_t c = 0; c < columns.size(); ++c) {
    if (columns[c].name == covariate && columns[c].kind != EncodedColumn::Kind::Level) {
      ModerationCurve out = moderation_curves(draws, X, static_cast<int>(c),
                                              numeric_grid(X, static_cast<int>(c), grid_size), units);
      out.covariate = covariate;
      return out;
    }
  }
  std::vector<int> level_cols;
  for (std::size_t c = 0; c < columns.size(); ++c) {
    if (columns[c].source == covariate && columns[c].kind == EncodedColumn::Kind::Level) {
      level_cols.push_back(static_cast<int>(c));
    }
  }
  if (level_cols.empty()) throw Error(ErrorKind::Column, "unknown covariate '" + covariate + "'");
  ModerationCurve out = ice_curves(draws, X, units, level_cols.size(), [&](Matrix& Xg, std::size_t g) {
    for (int c : level_cols) Xg.col(c).setZero();
    Xg.col(level_cols[g]).setOnes();
  });
  out.covariate = covariate;
  for (std::size_t g = 0; g < level_cols.size(); ++g) {
    out.grid.push_back(static_cast<double>(g));
    out.labels.push_back(columns[static_cast<std::size_t>(level_cols[g])].level);
  }
  return out;
}

void write_moderation_csv(const ModerationCurve& curve, const std::vector<std::string>& components,
                          std::ostream& out) {
  out << "curve,unit,component,grid_index,grid_value,tau\n";
  for (std::size_t k = 0; k < curve.ice.size(); ++k) {
    const std::string comp = csv_field(components.at(k));
    for (std::size_t r = 0; r < curve.units.size(); ++r) {
      for (std::size_t g = 0; g < curve.grid.size(); ++g) {
        out << "ice," << curve.units[r] + 1 << ',' << comp << ',' << g << ',' << csv_field(curve.labels[g]) << ','
            << format_number(curve.ice[k](static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(g))) << '\n';
      }
    }
    for (std::size_t g = 0; g < curve.grid.size(); ++g) {
      out << "pdp,," << comp << ',' << g << ',' << csv_field(curve.labels[g]) << ','
          << format_number(curve.pdp(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(k))) << '\n';
    }
  }
}

// ---------------------------------------------------------------- fitting

AnalysisRun fit_analysis(const AnalysisConfig& config, AnalysisData data, std::uint64_t seed) {
  config.validate();
  AnalysisRun run;
  run.config = config;
  run.seed = seed;
  run.data = std::move(data);
  const AnalysisData& d = run.data;
  const auto n = d.X.rows();
  if (config.use_propensity) {
    run.pi_hat.resize(n, d.T.cols());
    for (Eigen::Index k = 0; k < d.T.cols(); ++k) {
      Rng rng(seed, 1000 + static_cast<std::uint64_t>(k));
      run.pi_hat.col(k) = fit_propensity(d.T.col(k), d.X, config.propensity, rng);
    }
  }
  const int groups = static_cast<int>(d.outcomes.size());
  const int total = groups * config.chains_per_group;
  run.chains.resize(static_cast<std::size_t>(total));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(total));
  for (int c = 0; c < total; ++c) run.chain_group.push_back(c / config.chains_per_group);

#pragma omp parallel for schedule(dynamic)
  for (int c = 0; c < total; ++c) {
    try {
      CausalDataset ds = d.group(run.chain_group[static_cast<std::size_t>(c)]);
      ds.pi_hat = run.pi_hat;
      Rng rng(seed, 2000 + static_cast<std::uint64_t>(c));
      run.chains[static_cast<std::size_t>(c)] = fit_causal(ds, config.causal, rng, c);
    } catch (...) {
      errors[static_cast<std::size_t>(c)] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return run;
}

AnalysisRun fit_analysis(const AnalysisConfig& config, std::uint64_t seed) {
  return fit_analysis(config, load_csv(fs::path(config.data_path), config), seed);
}

// ---------------------------------------------------------------- output guard

OutputGuard::OutputGuard(fs::path dir) : dir_(std::move(dir)) {
  std::error_code ec;
  if (!fs::exists(dir_, ec)) {
    if (!fs::create_directories(dir_, ec) || ec) {
      throw Error(ErrorKind::Io, "cannot create directory '" + dir_.string() + "'");
    }
    created_ = true;
  } else if (!fs::is_directory(dir_, ec)) {
    throw Error(ErrorKind::Io, "'" + dir_.string() + "' is not a directory");
  }
}

OutputGuard::~OutputGuard() {
  if (committed_) return;
  std::error_code ec;
  for (const fs::path& f : files_) fs::remove(f, ec);
  if (created_) fs::remove_all(dir_, ec);
}

fs::path OutputGuard::track(const std::string& name) {
  files_.push_back(dir_ / name);
  return files_.back();
}

// ---------------------------------------------------------------- persistence

namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write '" + path.string() + "'");
  return out;
}

void close_out(std::ofstream& out, const fs::path& path) {
  out.close();
  if (!out) throw Error(ErrorKind::Io, "error writing '" + path.string() + "'");
}

std::string chain_file(const char* stem, int chain, const char* ext) {
  return std::string(stem) + "_chain" + std::to_string(chain) + ext;
}

const char* kind_name(EncodedColumn::Kind k) {
  switch (k) {
    case EncodedColumn::Kind::Numeric: return "numeric";
    case EncodedColumn::Kind::MissingIndicator: return "missing_indicator";
    case EncodedColumn::Kind::Level: return "level";
  }
  return "numeric";
}

EncodedColumn::Kind parse_kind(const std::string& s) {
  if (s == "numeric") return EncodedColumn::Kind::Numeric;
  if (s == "missing_indicator") return EncodedColumn::Kind::MissingIndicator;
  if (s == "level") return EncodedColumn::Kind::Level;
  throw Error(ErrorKind::Parse, "run.json: unknown column kind '" + s + "'");
}

Json vector_json(const Vector& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Vector json_vector(const Json& a) {
  Vector v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<Eigen::Index>(i)) = a[i].get<double>();
  return v;
}

double read_number(const std::string& text, const fs::path& file, std::size_t row, std::size_t col) {
  const auto v = to_number(text);
  if (!v) {
    throw Error(ErrorKind::Parse, file.filename().string() + " row " + std::to_string(row + 1) + ", column " +
                                      std::to_string(col + 1) + ": '" + text + "' is not a number");
  }
  return *v;
}

void expect_columns(const CsvTable& t, std::size_t count, const fs::path& file) {
  if (t.header.size() != count) {
    throw Error(ErrorKind::Parse, file.filename().string() + ": expected " + std::to_string(count) + " columns, found " +
                                      std::to_string(t.header.size()));
  }
}

std::string sigma_name(int a, int b) { return "sigma_" + std::to_string(a + 1) + "_" + std::to_string(b + 1); }

}  // namespace

void save_run(const AnalysisRun& run, const fs::path& dir) {
  OutputGuard guard(dir);
  const AnalysisData& d = run.data;
  const int p = static_cast<int>(d.Z.cols());
  const std::vector<std::string> components = run.config.components();
  const CausalDraws pooled = run.pooled();
  const AteReport ate = weighted_ate(pooled, d.weights);

  Json columns = Json::array();
  for (const EncodedColumn& c : d.columns) {
    columns.push_back({{"name", c.name}, {"source", c.source}, {"kind", kind_name(c.kind)}, {"level", c.level}});
  }
  Json chains = Json::array();
  for (std::size_t c = 0; c < run.chains.size(); ++c) {
    const CausalDraws& ch = run.chains[c];
    if (ch.chains.size() != 1) throw Error(ErrorKind::ViolatedInvariant, "run chains must be unpooled");
    chains.push_back({{"id", ch.chains[0].id},
                      {"group", run.chain_group[c]},
                      {"draws", ch.draws.size()},
                      {"mean", vector_json(ch.chains[0].scale.mean)},
                      {"sd", vector_json(ch.chains[0].scale.sd)}});
  }
  const CovariateLayout& layout = pooled.layout;
  Json manifest = {{"format", 1},
                   {"seed", run.seed},
                   {"config", to_json(run.config)},
                   {"n", d.X.rows()},
                   {"p", p},
                   {"rows_read", d.rows_read},
                   {"rows_dropped", d.rows_dropped},
                   {"columns", columns},
                   {"layout",
                    {{"num_x", layout.num_x},
                     {"num_pi", layout.num_pi},
                     {"mu_columns", layout.mu_columns},
                     {"tau_columns", layout.tau_columns}}},
                   {"chains", chains}};
  {
    const fs::path path = guard.track("run.json");
    std::ofstream out = open_out(path);
    out << manifest.dump(2) << '\n';
    close_out(out, path);
  }
  {
    const fs::path path = guard.track("units.csv");
    std::ofstream out = open_out(path);
    out << "unit,row,weight";
    for (const std::string& t : run.config.treatments) out << ',' << csv_field(t);
    for (Eigen::Index k = 0; k < run.pi_hat.cols(); ++k) out << ',' << csv_field("pi_" + run.config.treatments[k]);
    out << '\n';
    for (Eigen::Index i = 0; i < d.X.rows(); ++i) {
      out << i + 1 << ',' << d.source_rows[static_cast<std::size_t>(i)] << ',' << format_number(d.weights(i));
      for (Eigen::Index k = 0; k < d.T.cols(); ++k) out << ',' << format_number(d.T(i, k));
      for (Eigen::Index k = 0; k < run.pi_hat.cols(); ++k) out << ',' << format_number(run.pi_hat(i, k));
      out << '\n';
    }
    close_out(out, path);
  }
  {
    const fs::path path = guard.track("covariates.csv");
    std::ofstream out = open_out(path);
    for (std::size_t c = 0; c < d.columns.size(); ++c) out << (c ? "," : "") << csv_field(d.columns[c].name);
    out << '\n';
    for (Eigen::Index i = 0; i < d.X.rows(); ++i) {
      for (Eigen::Index c = 0; c < d.X.cols(); ++c) out << (c ? "," : "") << format_number(d.X(i, c));
      out << '\n';
    }
    close_out(out, path);
  }
  std::size_t offset = 0;
  for (std::size_t c = 0; c < run.chains.size(); ++c) {
    const CausalDraws& ch = run.chains[c];
    const int id = ch.chains[0].id;
    {
      const fs::path path = guard.track(chain_file("draws", id, ".csv"));
      std::ofstream out = open_out(path);
      out << "iteration,chain,group";
      for (int a = 0; a < p; ++a) {
        for (int b = 0; b < p; ++b) out << ',' << sigma_name(a, b);
      }
      for (const std::string& comp : components) out << ',' << csv_field("ate_" + comp);
      out << '\n';
      for (std::size_t k = 0; k < ch.draws.size(); ++k) {
        const CausalDraw& draw = ch.draws[k];
        out << draw.iteration << ',' << id << ',' << run.chain_group[c];
        for (int a = 0; a < p; ++a) {
          for (int b = 0; b < p; ++b) out << ',' << format_number(draw.sigma(a, b));
        }
        for (int j = 0; j < p; ++j) out << ',' << format_number(ate.draws(static_cast<Eigen::Index>(offset + k), j));
        out << '\n';
      }
      close_out(out, path);
    }
    {
      const fs::path path = guard.track(chain_file("tau", id, ".csv"));
      std::ofstream out = open_out(path);
      out << "iteration,unit";
      for (const std::string& comp : components) out << ',' << csv_field("tau_" + comp);
      out << '\n';
      for (const CausalDraw& draw : ch.draws) {
        for (Eigen::Index i = 0; i < draw.tau_hat.rows(); ++i) {
          out << draw.iteration << ',' << i + 1;
          for (int j = 0; j < p; ++j) out << ',' << format_number(draw.tau_hat(i, j));
          out << '\n';
        }
      }
      close_out(out, path);
    }
    {
      const fs::path path = guard.track(chain_file("trees", id, ".txt"));
      std::ofstream out = open_out(path);
      for (const CausalDraw& draw : ch.draws) {
        for (std::size_t t = 0; t < draw.mu_trees.size(); ++t) {
          out << draw.iteration << " mu " << t << ' ' << draw.mu_trees[t].serialize() << '\n';
        }
        for (std::size_t t = 0; t < draw.tau_trees.size(); ++t) {
          out << draw.iteration << " tau " << t << ' ' << draw.tau_trees[t].serialize() << '\n';
        }
      }
      close_out(out, path);
    }
    offset += ch.draws.size();
  }
  guard.commit();
}

namespace {

AnalysisRun read_run(const fs::path& dir, const Json& manifest) {
  AnalysisRun run;
  if (manifest.at("format").get<int>() != 1) throw Error(ErrorKind::Parse, "run.json: unsupported format");
  run.config = analysis_config_from_json(manifest.at("config"));
  run.seed = manifest.at("seed").get<std::uint64_t>();
  AnalysisData& d = run.data;
  const int p = manifest.at("p").get<int>();
  const auto n = manifest.at("n").get<Eigen::Index>();
  d.rows_read = manifest.at("rows_read").get<int>();
  d.rows_dropped = manifest.at("rows_dropped").get<int>();
  for (const Json& c : manifest.at("columns")) {
    d.columns.push_back({c.at("name").get<std::string>(), c.at("source").get<std::string>(),
                         parse_kind(c.at("kind").get<std::string>()), c.at("level").get<std::string>()});
  }
  CovariateLayout layout;
  const Json& lj = manifest.at("layout");
  layout.num_x = lj.at("num_x").get<int>();
  layout.num_pi = lj.at("num_pi").get<int>();
  layout.mu_columns = lj.at("mu_columns").get<std::vector<int>>();
  layout.tau_columns = lj.at("tau_columns").get<std::vector<int>>();

  const int q = static_cast<int>(run.config.treatments.size());
  {
    const fs::path path = dir / "units.csv";
    const CsvTable t = read_csv_file(path);
    expect_columns(t, 3 + static_cast<std::size_t>(q + layout.num_pi), path);
    if (static_cast<Eigen::Index>(t.rows.size()) != n) throw Error(ErrorKind::Parse, "units.csv: unit count mismatch");
    d.weights.resize(n);
    d.T.resize(n, q);
    run.pi_hat.resize(layout.num_pi > 0 ? n : 0, layout.num_pi);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& row = t.rows[static_cast<std::size_t>(i)];
      const auto r = static_cast<std::size_t>(i);
      d.source_rows.push_back(static_cast<int>(read_number(row[1], path, r, 1)));
      d.weights(i) = read_number(row[2], path, r, 2);
      for (int k = 0; k < q; ++k) d.T(i, k) = read_number(row[3 + k], path, r, 3 + k);
      for (int k = 0; k < layout.num_pi; ++k) run.pi_hat(i, k) = read_number(row[3 + q + k], path, r, 3 + q + k);
    }
    d.Z = expand_treatments(d.T, p);
  }
  {
    const fs::path path = dir / "covariates.csv";
    const CsvTable t = read_csv_file(path);
    expect_columns(t, d.columns.size(), path);
    if (static_cast<Eigen::Index>(t.rows.size()) != n) {
      throw Error(ErrorKind::Parse, "covariates.csv: unit count mismatch");
    }
    d.X.resize(n, static_cast<Eigen::Index>(d.columns.size()));
    for (Eigen::Index i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < d.columns.size(); ++c) {
        d.X(i, static_cast<Eigen::Index>(c)) =
            read_number(t.rows[static_cast<std::size_t>(i)][c], path, static_cast<std::size_t>(i), c);
      }
    }
  }

  for (const Json& cj : manifest.at("chains")) {
    const int id = cj.at("id").get<int>();
    const auto count = cj.at("draws").get<std::size_t>();
    run.chain_group.push_back(cj.at("group").get<int>());
    CausalDraws ch;
    ch.n = static_cast<int>(n);
    ch.p = p;
    ch.layout = layout;
    ch.chains.push_back({id, {json_vector(cj.at("mean")), json_vector(cj.at("sd"))}});
    ch.draws.resize(count);

    const fs::path draws_path = dir / chain_file("draws", id, ".csv");
    const CsvTable dt = read_csv_file(draws_path);
    expect_columns(dt, 3 + static_cast<std::size_t>(p * p + p), draws_path);
    if (dt.rows.size() != count) throw Error(ErrorKind::Parse, draws_path.filename().string() + ": draw count mismatch");
    std::map<int, std::size_t> slot;
    for (std::size_t k = 0; k < count; ++k) {
      const auto& row = dt.rows[k];
      CausalDraw& draw = ch.draws[k];
      draw.chain = id;
      draw.iteration = static_cast<int>(read_number(row[0], draws_path, k, 0));
      draw.sigma.resize(p, p);
      for (int a = 0; a < p; ++a) {
        for (int b = 0; b < p; ++b) {
          const std::size_t col = 3 + static_cast<std::size_t>(a * p + b);
          draw.sigma(a, b) = read_number(row[col], draws_path, k, col);
        }
      }
      draw.tau_hat.resize(n, p);
      slot[draw.iteration] = k;
    }

    const fs::path tau_path = dir / chain_file("tau", id, ".csv");
    const CsvTable tt = read_csv_file(tau_path);
    expect_columns(tt, 2 + static_cast<std::size_t>(p), tau_path);
    if (tt.rows.size() != count * static_cast<std::size_t>(n)) {
      throw Error(ErrorKind::Parse, tau_path.filename().string() + ": row count mismatch");
    }
    for (std::size_t r = 0; r < tt.rows.size(); ++r) {
      const auto& row = tt.rows[r];
      const auto it = slot.find(static_cast<int>(read_number(row[0], tau_path, r, 0)));
      const auto unit = static_cast<Eigen::Index>(read_number(row[1], tau_path, r, 1)) - 1;
      if (it == slot.end() || unit < 0 || unit >= n) {
        throw Error(ErrorKind::Parse, tau_path.filename().string() + " row " + std::to_string(r + 1) +
                                          ": unknown iteration or unit");
      }
      for (int j = 0; j < p; ++j) {
        ch.draws[it->second].tau_hat(unit, j) = read_number(row[2 + j], tau_path, r, 2 + static_cast<std::size_t>(j));
      }
    }

    const fs::path trees_path = dir / chain_file("trees", id, ".txt");
    std::ifstream trees(trees_path, std::ios::binary);
    if (!trees) throw Error(ErrorKind::Io, "cannot open '" + trees_path.string() + "'");
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(trees, line)) {
      ++line_no;
      if (line.empty()) continue;
      std::istringstream head(line);
      int iteration = 0;
      std::string ensemble;
      std::size_t index = 0;
      if (!(head >> iteration >> ensemble >> index) || (ensemble != "mu" && ensemble != "tau")) {
        throw Error(ErrorKind::Parse, trees_path.filename().string() + " line " + std::to_string(line_no) +
                                          ": malformed tree record");
      }
      const auto it = slot.find(iteration);
      if (it == slot.end()) {
        throw Error(ErrorKind::Parse, trees_path.filename().string() + " line " + std::to_string(line_no) +
                                          ": unknown iteration");
      }
      const auto start = static_cast<std::size_t>(head.tellg()) + 1;
      auto& list = ensemble == "mu" ? ch.draws[it->second].mu_trees : ch.draws[it->second].tau_trees;
      if (index != list.size()) {
        throw Error(ErrorKind::Parse, trees_path.filename().string() + " line " + std::to_string(line_no) +
                                          ": trees out of order");
      }
      list.push_back(Tree::deserialize(std::string_view(line).substr(start), p));
    }

    const CausalPrediction replay = predict_causal(ch, d.X, d.Z, run.pi_hat);
    for (std::size_t k = 0; k < count; ++k) {
      CausalDraw& draw = ch.draws[k];
      if (draw.tau_hat != replay.tau[k]) {
        throw Error(ErrorKind::ViolatedInvariant, tau_path.filename().string() +
                                                      " disagrees with the stored trees at iteration " +
                                                      std::to_string(draw.iteration));
      }
      draw.mu_hat = replay.mu[k];
      draw.y_hat = replay.y[k];
    }
    run.chains.push_back(std::move(ch));
  }
  return run;
}

}  // namespace

AnalysisRun load_run(const fs::path& dir) {
  const Json manifest = read_json_file((dir / "run.json").string());
  try {
    return read_run(dir, manifest);
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("run.json: ") + e.what());
  }
}

// ---------------------------------------------------------------- tables and report

void write_ate_csv(const AteReport& ate, const std::vector<std::string>& components, std::ostream& out) {
  out << "component,mean,lower,upper,draws\n";
  for (int k = 0; k < ate.p; ++k) {
    out << csv_field(components.at(static_cast<std::size_t>(k))) << ',' << format_number(ate.mean(k)) << ','
        << format_number(ate.lower(k)) << ',' << format_number(ate.upper(k)) << ',' << ate.draws.rows() << '\n';
  }
}

void write_ate_draws_csv(const AteReport& ate, const std::vector<std::string>& components, std::ostream& out) {
  out << "draw,chain,iteration";
  for (int k = 0; k < ate.p; ++k) out << ',' << csv_field(components.at(static_cast<std::size_t>(k)));
  out << '\n';
  for (Eigen::Index d = 0; d < ate.draws.rows(); ++d) {
    out << d + 1 << ',' << ate.chain[static_cast<std::size_t>(d)] << ',' << ate.iteration[static_cast<std::size_t>(d)];
    for (int k = 0; k < ate.p; ++k) out << ',' << format_number(ate.draws(d, k));
    out << '\n';
  }
}

std::string format_group_size(int count, int total) {
  const long pct = total > 0 ? std::lround(100.0 * count / total) : 0;
  return std::to_string(count) + " (" + std::to_string(pct) + "%)";
}

namespace {

std::string fixed(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

}  // namespace

void write_run_report(const AnalysisRun& run, const AteReport& ate, std::ostream& out) {
  const AnalysisData& d = run.data;
  const int n = static_cast<int>(d.X.rows());
  out << "Units: " << n << " of " << d.rows_read << " rows (" << d.rows_dropped
      << " dropped for missing outcome or treatment)\n";
  out << "Outcome groups: " << (run.chain_group.empty() ? 0 : run.chain_group.back() + 1)
      << ", chains: " << run.chains.size() << ", pooled draws: " << ate.draws.rows() << "\n\n";

  std::size_t w = 10;
  for (const std::string& t : run.config.treatments) w = std::max(w, t.size() + 2);
  out << pad("Treatment", w) << pad("Treatment Group Size", 24) << "Control Group Size\n";
  for (Eigen::Index k = 0; k < d.T.cols(); ++k) {
    const int treated = static_cast<int>(d.T.col(k).sum());
    out << pad(run.config.treatments[static_cast<std::size_t>(k)], w) << pad(format_group_size(treated, n), 24)
        << format_group_size(n - treated, n) << '\n';
  }
  out << '\n';
  const std::vector<std::string> components = run.config.components();
  std::size_t cw = 11;
  for (const std::string& c : components) cw = std::max(cw, c.size() + 2);
  out << pad("Component", cw) << pad("ATE", 12) << "95% CI\n";
  for (int k = 0; k < ate.p; ++k) {
    out << pad(components[static_cast<std::size_t>(k)], cw) << pad(fixed(ate.mean(k)), 12) << '['
        << fixed(ate.lower(k)) << ", " << fixed(ate.upper(k)) << "]\n";
  }
}

}  // namespace mvbcf
