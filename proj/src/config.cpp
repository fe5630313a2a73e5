#include "mvbcf/config.hpp"

#include "json_fields.hpp"

#include <fstream>
#include <sstream>

namespace mvbcf {

namespace {

using detail::bad;
using detail::Fields;

TreePriorConfig tree_prior_at(Fields& f, const std::string& key, TreePriorConfig base) {
  if (const Json* v = f.find(key)) {
    Fields g(*v, f.path(key));
    g.get("alpha", base.alpha);
    g.get("beta", base.beta);
  }
  return base;
}

MoveWeights moves_at(Fields& f, const std::string& key, MoveWeights base) {
  if (const Json* v = f.find(key)) {
    Fields g(*v, f.path(key));
    g.get("grow", base.grow);
    g.get("prune", base.prune);
    g.get("change", base.change);
    g.get("swap", base.swap);
  }
  return base;
}

Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

CausalConfig read_causal(const Json& j, CausalConfig c, const std::string& where) {
  Fields f(j, where);
  f.get("p", c.p);
  f.get("num_mu_trees", c.num_mu_trees);
  f.get("num_tau_trees", c.num_tau_trees);
  f.get("iterations", c.iterations);
  f.get("burn_in", c.burn_in);
  c.mu_tree_prior = tree_prior_at(f, "mu_tree_prior", c.mu_tree_prior);
  c.tau_tree_prior = tree_prior_at(f, "tau_tree_prior", c.tau_tree_prior);
  f.get("mu_leaf_variance", c.mu_leaf_variance);
  f.get("tau_leaf_variance", c.tau_leaf_variance);
  f.get("mu_prior_mean", c.mu_prior_mean);
  f.get("tau_prior_mean", c.tau_prior_mean);
  f.get("wishart_df", c.wishart_df);
  f.get("wishart_scale", c.wishart_scale);
  f.get("mu_covariates", c.mu_covariates);
  f.get("tau_covariates", c.tau_covariates);
  c.moves = moves_at(f, "moves", c.moves);
  return c;
}

BartConfig read_bart(const Json& j, BartConfig c, const std::string& where) {
  Fields f(j, where);
  f.get("num_trees", c.num_trees);
  f.get("iterations", c.iterations);
  f.get("burn_in", c.burn_in);
  c.tree_prior = tree_prior_at(f, "tree_prior", c.tree_prior);
  f.get("leaf_sd", c.leaf_sd);
  f.get("nu", c.nu);
  f.get("lambda", c.lambda);
  c.moves = moves_at(f, "moves", c.moves);
  return c;
}

void read_spec_fields(Fields& f, SimSpec& s) {
  if (const Json* v = f.find("effect_kind")) {
    if (!v->is_string()) bad(f.path("effect_kind"), "expected a string");
    s.effect_kind = parse_effect_kind(v->get<std::string>());
  }
  f.get("n_train", s.n_train);
  f.get("n_test", s.n_test);
  f.get("replications", s.replications);
  f.get("snr_band", s.snr_band);
  f.get("tau_magnitude_cap", s.tau_magnitude_cap);
  f.get("tau_magnitude_floor", s.tau_magnitude_floor);
  f.get("seed", s.seed);
  f.get("zero_noise", s.zero_noise);
  f.get("fixed_snr", s.fixed_snr);
  f.get("fixed_tau", s.fixed_tau);
}

}  // namespace

TreePriorConfig tree_prior_from_json(const Json& j, TreePriorConfig base) {
  Fields f(j, "");
  f.get("alpha", base.alpha);
  f.get("beta", base.beta);
  return base;
}

MoveWeights move_weights_from_json(const Json& j, MoveWeights base) {
  Fields f(j, "");
  f.get("grow", base.grow);
  f.get("prune", base.prune);
  f.get("change", base.change);
  f.get("swap", base.swap);
  return base;
}

CausalConfig causal_config_from_json(const Json& j, CausalConfig base, const std::string& where) {
  return read_causal(j, std::move(base), where);
}

BartConfig bart_config_from_json(const Json& j, BartConfig base, const std::string& where) {
  return read_bart(j, std::move(base), where);
}

SimSpec sim_spec_from_json(const Json& j, SimSpec base) {
  Fields f(j, "");
  read_spec_fields(f, base);
  return base;
}

Method parse_method(const std::string& text) {
  for (Method m : {Method::Mvbcf, Method::Bcf, Method::Bart}) {
    if (text == to_string(m)) return m;
  }
  throw Error(ErrorKind::Configuration, "unknown method '" + text + "' (expected mvbcf, bcf or bart)");
}

void benchmark_from_json(const Json& j, SimSpec& spec, BenchmarkSettings& settings) {
  Fields f(j, "");
  read_spec_fields(f, spec);
  if (const Json* v = f.find("causal")) settings.causal = read_causal(*v, settings.causal, "causal");
  if (const Json* v = f.find("bart")) settings.bart = read_bart(*v, settings.bart, "bart");
  if (const Json* v = f.find("propensity")) settings.propensity = read_bart(*v, settings.propensity, "propensity");
  if (const Json* v = f.find("methods")) {
    if (!v->is_array() || v->empty()) bad("methods", "expected a non-empty array of method names");
    settings.methods.clear();
    for (const Json& m : *v) {
      if (!m.is_string()) bad("methods", "expected method names");
      settings.methods.push_back(parse_method(m.get<std::string>()));
    }
  }
}

Json to_json(const TreePriorConfig& c) { return {{"alpha", c.alpha}, {"beta", c.beta}}; }

Json to_json(const MoveWeights& w) {
  return {{"grow", w.grow}, {"prune", w.prune}, {"change", w.change}, {"swap", w.swap}};
}

Json to_json(const CausalConfig& c) {
  auto vec = [](const std::optional<Vector>& v) {
    if (!v) return Json(nullptr);
    Json a = Json::array();
    for (Eigen::Index i = 0; i < v->size(); ++i) a.push_back((*v)(i));
    return a;
  };
  return {{"p", c.p},
          {"num_mu_trees", c.num_mu_trees},
          {"num_tau_trees", c.num_tau_trees},
          {"iterations", c.iterations},
          {"burn_in", c.burn_in},
          {"mu_tree_prior", to_json(c.mu_tree_prior)},
          {"tau_tree_prior", to_json(c.tau_tree_prior)},
          {"mu_leaf_variance", optional_json(c.mu_leaf_variance)},
          {"tau_leaf_variance", optional_json(c.tau_leaf_variance)},
          {"mu_prior_mean", vec(c.mu_prior_mean)},
          {"tau_prior_mean", vec(c.tau_prior_mean)},
          {"wishart_df", optional_json(c.wishart_df)},
          {"wishart_scale", optional_json(c.wishart_scale)},
          {"mu_covariates", c.mu_covariates},
          {"tau_covariates", c.tau_covariates},
          {"moves", to_json(c.moves)}};
}

Json to_json(const BartConfig& c) {
  return {{"num_trees", c.num_trees},
          {"iterations", c.iterations},
          {"burn_in", c.burn_in},
          {"tree_prior", to_json(c.tree_prior)},
          {"leaf_sd", optional_json(c.leaf_sd)},
          {"nu", c.nu},
          {"lambda", optional_json(c.lambda)},
          {"moves", to_json(c.moves)}};
}

Json to_json(const SimSpec& s) {
  Json fixed_tau = nullptr;
  if (s.fixed_tau) fixed_tau = {(*s.fixed_tau)[0], (*s.fixed_tau)[1]};
  return {{"effect_kind", to_string(s.effect_kind)},
          {"n_train", s.n_train},
          {"n_test", s.n_test},
          {"replications", s.replications},
          {"snr_band", {s.snr_band[0], s.snr_band[1]}},
          {"tau_magnitude_cap", s.tau_magnitude_cap},
          {"tau_magnitude_floor", s.tau_magnitude_floor},
          {"seed", s.seed},
          {"zero_noise", s.zero_noise},
          {"fixed_snr", optional_json(s.fixed_snr)},
          {"fixed_tau", fixed_tau}};
}

Json parse_json(const std::string& text, const std::string& origin) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorKind::Parse, origin + ": " + e.what());
  }
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_json(text.str(), path);
}

}  // namespace mvbcf
