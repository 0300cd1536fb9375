#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bcs/core_types.hpp"
#include "bcs/encoding.hpp"
#include "bcs/error.hpp"

namespace bcs {

/// A completed chain plus what prediction needs to reuse it.
struct StoredChain {
  PosteriorDraws draws;
  Priors priors;
  SamplerSettings settings;
  EncodingReport encoding;
  std::vector<int> beta_columns;
  std::vector<std::string> agent_names;
  Matrix beta_points;
};

namespace chain_detail {

inline constexpr const char* kSchema = "bcs.chain/1";

inline void write_f64(const std::filesystem::path& path, const std::vector<double>& values) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError({"cannot write '" + path.string() + "'"});
  for (double v : values) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    unsigned char bytes[8];
    for (int b = 0; b < 8; ++b) bytes[b] = static_cast<unsigned char>(bits >> (8 * b));
    f.write(reinterpret_cast<const char*>(bytes), 8);
  }
}

inline std::vector<double> read_f64(const std::filesystem::path& path, std::size_t expected) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError({"cannot read '" + path.string() + "'"});
  std::vector<double> out(expected);
  for (std::size_t i = 0; i < expected; ++i) {
    unsigned char bytes[8];
    if (!f.read(reinterpret_cast<char*>(bytes), 8))
      throw ValidationError({"'" + path.string() + "' is truncated"});
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
    out[i] = std::bit_cast<double>(bits);
  }
  if (f.peek() != std::char_traits<char>::eof())
    throw ValidationError({"'" + path.string() + "' has trailing bytes"});
  return out;
}

inline nlohmann::json ig_json(const IgPrior& p) { return {{"delta", p.delta}, {"eta", p.eta}}; }
inline IgPrior ig_from(const nlohmann::json& j) { return {j.at("delta").get<double>(), j.at("eta").get<double>()}; }

}  // namespace chain_detail

/// Writes `manifest.json` and little-endian float64 arrays (row-major) into `dir`.
inline void save_chain(const std::filesystem::path& dir, const StoredChain& c) {
  using nlohmann::json;
  namespace cd = chain_detail;
  std::filesystem::create_directories(dir);
  const auto d = static_cast<std::size_t>(c.draws.size());
  const Eigen::Index n = c.beta_points.rows();
  const Eigen::Index k = c.priors.bar_beta.size();

  std::vector<double> beta, mu, f, hyper, tau;
  beta.reserve(d * static_cast<std::size_t>(n * k));
  for (const auto& s : c.draws.states) {
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < k; ++j) beta.push_back(s.latent.beta(i, j));
      for (Eigen::Index j = 0; j + 1 < k; ++j) f.push_back(s.latent.f(i, j));
      mu.push_back(s.latent.mu[i]);
    }
    hyper.push_back(s.hyper.sigma2);
    hyper.push_back(s.hyper.tau2_mu);
    hyper.push_back(s.hyper.phi_mu);
    for (Eigen::Index j = 0; j < k; ++j) hyper.push_back(s.hyper.tau2_beta[j]);
    for (Eigen::Index j = 0; j < k; ++j) hyper.push_back(s.hyper.phi_beta[j]);
  }
  for (Eigen::Index r = 0; r < c.draws.tau.rows(); ++r)
    for (Eigen::Index i = 0; i < c.draws.tau.cols(); ++i) tau.push_back(c.draws.tau(r, i));
  std::vector<double> points;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index q = 0; q < c.beta_points.cols(); ++q) points.push_back(c.beta_points(i, q));

  cd::write_f64(dir / "beta.f64", beta);
  cd::write_f64(dir / "f.f64", f);
  cd::write_f64(dir / "mu.f64", mu);
  cd::write_f64(dir / "hyper.f64", hyper);
  cd::write_f64(dir / "tau.f64", tau);
  cd::write_f64(dir / "beta_points.f64", points);

  const auto& p = c.priors;
  json ig_beta = json::array();
  for (const auto& g : p.ig_beta) ig_beta.push_back(cd::ig_json(g));
  json settings{{"m", c.settings.m},
                {"n_iter", c.settings.n_iter},
                {"n_burn", c.settings.n_burn},
                {"thin", c.settings.thin},
                {"seed", c.settings.seed},
                {"phi_proposal_sd", c.settings.phi_proposal_sd ? json(*c.settings.phi_proposal_sd) : json(nullptr)}};
  json manifest{
      {"schema", cd::kSchema},
      {"byte_order", "little"},
      {"n", n},
      {"num_agents", k - 1},
      {"draws", d},
      {"beta_dim", c.beta_points.cols()},
      {"agents", c.agent_names},
      {"beta_columns", c.beta_columns},
      {"settings", settings},
      {"priors",
       {{"bar_beta", std::vector<double>(p.bar_beta.data(), p.bar_beta.data() + p.bar_beta.size())},
        {"bar_mu", p.bar_mu},
        {"ig_sigma", cd::ig_json(p.ig_sigma)},
        {"ig_mu", cd::ig_json(p.ig_mu)},
        {"ig_beta", ig_beta},
        {"phi_bounds_mu", {p.phi_bounds_mu.lo, p.phi_bounds_mu.hi}},
        {"phi_bounds_beta", {p.phi_bounds_beta.lo, p.phi_bounds_beta.hi}}}},
      {"encoding", c.encoding},
      {"arrays",
       {{"beta", {{"file", "beta.f64"}, {"shape", {d, n, k}}}},
        {"f", {{"file", "f.f64"}, {"shape", {d, n, k - 1}}}},
        {"mu", {{"file", "mu.f64"}, {"shape", {d, n}}}},
        {"hyper",
         {{"file", "hyper.f64"},
          {"shape", {d, 3 + 2 * k}},
          {"columns", "sigma2, tau2_mu, phi_mu, tau2_beta[0..J], phi_beta[0..J]"}}},
        {"tau", {{"file", "tau.f64"}, {"shape", {d, n}}}},
        {"beta_points", {{"file", "beta_points.f64"}, {"shape", {n, c.beta_points.cols()}}}}}}};
  std::ofstream mf(dir / "manifest.json", std::ios::binary);
  if (!mf) throw ValidationError({"cannot write manifest in '" + dir.string() + "'"});
  mf << manifest.dump(2) << '\n';
}

inline StoredChain load_chain(const std::filesystem::path& dir) {
  using nlohmann::json;
  namespace cd = chain_detail;
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw ValidationError({"no manifest.json in '" + dir.string() + "'"});
  json m;
  try {
    m = json::parse(mf);
  } catch (const json::exception& e) {
    throw ValidationError({std::string("malformed manifest: ") + e.what()});
  }
  if (m.value("schema", "") != cd::kSchema) throw ValidationError({"unsupported chain schema"});

  StoredChain c;
  try {
    const auto n = m.at("n").get<Eigen::Index>();
    const auto k = m.at("num_agents").get<Eigen::Index>() + 1;
    const auto d = m.at("draws").get<std::size_t>();
    const auto dim = m.at("beta_dim").get<Eigen::Index>();
    c.agent_names = m.at("agents").get<std::vector<std::string>>();
    c.beta_columns = m.at("beta_columns").get<std::vector<int>>();
    c.encoding = m.at("encoding").get<EncodingReport>();

    const auto& s = m.at("settings");
    c.settings.m = s.at("m").get<int>();
    c.settings.n_iter = s.at("n_iter").get<long>();
    c.settings.n_burn = s.at("n_burn").get<long>();
    c.settings.thin = s.at("thin").get<long>();
    c.settings.seed = s.at("seed").get<std::uint64_t>();
    if (!s.at("phi_proposal_sd").is_null()) c.settings.phi_proposal_sd = s.at("phi_proposal_sd").get<double>();

    const auto& p = m.at("priors");
    const auto bb = p.at("bar_beta").get<std::vector<double>>();
    c.priors.bar_beta = Eigen::Map<const Vector>(bb.data(), static_cast<Eigen::Index>(bb.size()));
    c.priors.bar_mu = p.at("bar_mu").get<double>();
    c.priors.ig_sigma = cd::ig_from(p.at("ig_sigma"));
    c.priors.ig_mu = cd::ig_from(p.at("ig_mu"));
    for (const auto& g : p.at("ig_beta")) c.priors.ig_beta.push_back(cd::ig_from(g));
    c.priors.phi_bounds_mu = {p.at("phi_bounds_mu")[0].get<double>(), p.at("phi_bounds_mu")[1].get<double>()};
    c.priors.phi_bounds_beta = {p.at("phi_bounds_beta")[0].get<double>(), p.at("phi_bounds_beta")[1].get<double>()};
    if (c.priors.bar_beta.size() != k) throw ValidationError({"manifest bar_beta length disagrees with num_agents"});

    const auto nn = static_cast<std::size_t>(n);
    const auto kk = static_cast<std::size_t>(k);
    const auto beta = cd::read_f64(dir / "beta.f64", d * nn * kk);
    const auto f = cd::read_f64(dir / "f.f64", d * nn * (kk - 1));
    const auto mu = cd::read_f64(dir / "mu.f64", d * nn);
    const auto hyper = cd::read_f64(dir / "hyper.f64", d * (3 + 2 * kk));
    const auto tau = cd::read_f64(dir / "tau.f64", d * nn);
    const auto points = cd::read_f64(dir / "beta_points.f64", nn * static_cast<std::size_t>(dim));

    c.beta_points.resize(n, dim);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index q = 0; q < dim; ++q) c.beta_points(i, q) = points[static_cast<std::size_t>(i * dim + q)];
    c.draws.states.resize(d);
    c.draws.tau.resize(static_cast<Eigen::Index>(d), n);
    std::size_t ib = 0, iff = 0, im = 0, ih = 0, it = 0;
    for (std::size_t r = 0; r < d; ++r) {
      auto& st = c.draws.states[r];
      st.latent.beta.resize(n, k);
      st.latent.f.resize(n, k - 1);
      st.latent.mu.resize(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < k; ++j) st.latent.beta(i, j) = beta[ib++];
        for (Eigen::Index j = 0; j + 1 < k; ++j) st.latent.f(i, j) = f[iff++];
        st.latent.mu[i] = mu[im++];
      }
      st.hyper.sigma2 = hyper[ih++];
      st.hyper.tau2_mu = hyper[ih++];
      st.hyper.phi_mu = hyper[ih++];
      st.hyper.tau2_beta.resize(k);
      st.hyper.phi_beta.resize(k);
      for (Eigen::Index j = 0; j < k; ++j) st.hyper.tau2_beta[j] = hyper[ih++];
      for (Eigen::Index j = 0; j < k; ++j) st.hyper.phi_beta[j] = hyper[ih++];
      for (Eigen::Index i = 0; i < n; ++i) c.draws.tau(static_cast<Eigen::Index>(r), i) = tau[it++];
    }
  } catch (const json::exception& e) {
    throw ValidationError({std::string("malformed manifest: ") + e.what()});
  }
  return c;
}

}  // namespace bcs
