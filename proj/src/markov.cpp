#include "kicklab/markov.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "kicklab/errors.hpp"
#include "kicklab/parallel.hpp"

namespace kicklab {

namespace {

constexpr const char* kModule = "markov";

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

// Signed measure mu - nu on the merged sorted support, with the fixed-frame
// positions of the kinks created by the dual program (prefix sums of w, sorted
// and deduplicated) and the rank of the i-th prefix sum.
struct SignedLine {
  std::vector<double> x;
  std::vector<double> w;
  std::vector<double> kinks;
  std::vector<std::size_t> rank;

  void append(double xi, double wi) {
    if (!x.empty() && x.back() == xi) {
      w.back() += wi;
    } else {
      x.push_back(xi);
      w.push_back(wi);
    }
  }
  // rank[i] locates w_0 + ... + w_{i-1}; rank[0] locates 0.
  void finish() {
    std::vector<double> birth(x.size() + 1, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) birth[i + 1] = birth[i] + w[i];
    kinks = birth;
    std::sort(kinks.begin(), kinks.end());
    kinks.erase(std::unique(kinks.begin(), kinks.end()), kinks.end());
    rank.resize(birth.size());
    for (std::size_t i = 0; i < birth.size(); ++i) {
      rank[i] = static_cast<std::size_t>(std::lower_bound(kinks.begin(), kinks.end(), birth[i]) - kinks.begin());
    }
  }
};

SignedLine signed_merge(const EmpiricalLaw1D& mu, const EmpiricalLaw1D& nu) {
  std::vector<std::pair<double, double>> pts;
  pts.reserve(mu.x.size() + nu.x.size());
  for (std::size_t i = 0; i < mu.x.size(); ++i) pts.emplace_back(mu.x[i], mu.w[i]);
  for (std::size_t i = 0; i < nu.x.size(); ++i) pts.emplace_back(nu.x[i], -nu.w[i]);
  std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  SignedLine line;
  for (const auto& [x, w] : pts) line.append(x, w);
  line.finish();
  return line;
}

// Two weighted samples merged along a precomputed order of the concatenation
// (a first, then b); reused by the bootstrap so each replicate skips the sort.
SignedLine signed_merge_sorted(std::span<const std::size_t> order, std::span<const double> va,
                               std::span<const double> vb, std::span<const double> weights) {
  const std::size_t n = va.size();
  double total = 0.0;
  for (double w : weights) total += w;
  SignedLine line;
  for (std::size_t i : order) {
    const std::size_t j = i < n ? i : i - n;
    if (weights[j] == 0.0) continue;
    line.append(i < n ? va[j] : vb[j], i < n ? weights[j] : -weights[j]);
  }
  // Integer multiplicities cancel exactly before normalisation.
  for (double& w : line.w) w /= total;
  line.finish();
  return line;
}

// Fenwick tree over kink ranks holding slope increments and increment x position.
class KinkTree {
 public:
  explicit KinkTree(std::size_t n) : w_(n + 1, 0.0), ws_(n + 1, 0.0) {}

  void add(std::size_t r, double dw, double pos) {
    for (std::size_t i = r + 1; i < w_.size(); i += i & (~i + 1)) {
      w_[i] += dw;
      ws_[i] += dw * pos;
    }
  }
  // Sums over ranks < r.
  double weight_before(std::size_t r) const { return sum(w_, r); }
  double moment_before(std::size_t r) const { return sum(ws_, r); }
  // Smallest rank r with weight_before(r + 1) > target (or >= when `inclusive`).
  std::size_t search(double target, bool inclusive) const {
    std::size_t pos = 0;
    std::size_t step = 1;
    while (step * 2 < w_.size()) step *= 2;
    for (; step > 0; step /= 2) {
      const std::size_t next = pos + step;
      if (next < w_.size() && (inclusive ? w_[next] < target : w_[next] <= target)) {
        pos = next;
        target -= w_[next];
      }
    }
    return pos;
  }

 private:
  static double sum(const std::vector<double>& a, std::size_t r) {
    double s = 0.0;
    for (std::size_t i = r; i > 0; i -= i & (~i + 1)) s += a[i];
    return s;
  }
  std::vector<double> w_, ws_;
};

// max sum_i w_i f_i subject to |f_i| <= t and |f_{i+1} - f_i| <= L (x_{i+1} - x_i),
// with t = 1 - L, solved through its dual
//   min over flows F of sum_i t |w_i + F_i - F_{i-1}| + sum_i L g_i |F_i|,
// F_{-1} = F_{n-1} = 0. The cost-to-go is convex piecewise linear in F_i. Per
// point it is clipped to slopes in [-t, t] (infimal convolution with t|.|),
// translated by w_i, and receives a kink L g_i |F| at the origin. In the frame
// that absorbs the translations, the origin before point i sits at the prefix
// sum w_0 + ... + w_{i-1}, so every kink position is known in advance; a
// Fenwick tree over them gives slopes and integrals, and clipping only removes
// kinks from the two ends. The value at the origin is tracked throughout.
double dual_lipschitz_program(const SignedLine& line, double L) {
  const double t = 1.0 - L;
  const std::size_t n = line.x.size();
  if (t <= 0.0 || n == 0) return 0.0;
  const std::vector<double>& st = line.kinks;
  const std::size_t R = st.size();
  KinkTree tree(R);
  std::vector<double> weight(R, 0.0);
  std::set<std::size_t> alive;
  double s_left = -t, value = 0.0;

  auto insert = [&](std::size_t r, double dw) {
    tree.add(r, dw, st[r]);
    weight[r] += dw;
    alive.insert(r);
  };
  auto set_weight = [&](std::size_t r, double w) {
    tree.add(r, w - weight[r], st[r]);
    weight[r] = w;
    if (w <= 0.0) alive.erase(r);
  };
  // Integral of the slope between kink positions ra <= rb.
  auto integral = [&](std::size_t ra, std::size_t rb) {
    const double wa = tree.weight_before(ra), wb = tree.weight_before(rb);
    return (s_left + wa) * (st[rb] - st[ra]) + st[rb] * (wb - wa) - (tree.moment_before(rb) - tree.moment_before(ra));
  };

  insert(line.rank[0], 2.0 * t);  // t |F|, the clipped indicator of F_{-1} = 0
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t zero = line.rank[i];
    if (i > 0) {
      // Clip the slopes to [-t, t]; the ends are the only places touched.
      if (s_left < -t) {
        const std::size_t r = std::min(tree.search(-t - s_left, true), R - 1);
        if (zero < r) value += integral(zero, r) + t * (st[r] - st[zero]);
        const double kept = s_left + tree.weight_before(r + 1) + t;
        while (!alive.empty() && *alive.begin() < r) set_weight(*alive.begin(), 0.0);
        set_weight(r, std::max(kept, 0.0));
        s_left = -t;
      }
      if (s_left + tree.weight_before(R) > t) {
        const std::size_t r = std::min(tree.search(t - s_left, false), R - 1);
        if (zero > r) value += -integral(r, zero) + t * (st[zero] - st[r]);
        while (!alive.empty() && *alive.rbegin() > r) set_weight(*alive.rbegin(), 0.0);
        set_weight(r, std::max(t - (s_left + tree.weight_before(r)), 0.0));
      }
    }
    // Translate: new(F) = old(F + w_i) moves the origin to the next prefix sum.
    const std::size_t next = line.rank[i + 1];
    value += next >= zero ? integral(zero, next) : -integral(next, zero);
    if (i + 1 == n) break;
    const double kink = L * (line.x[i + 1] - line.x[i]);
    if (kink > 0.0) {
      s_left -= kink;
      insert(next, 2.0 * kink);
    }
  }
  return value;
}

DualLipschitzResult maximize_over_lipschitz(const SignedLine& line, double tol) {
  // The program value is concave in L: golden-section search on [0, 1].
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = 0.0, b = 1.0;
  double c = b - g * (b - a), d = a + g * (b - a);
  double fc = dual_lipschitz_program(line, c), fd = dual_lipschitz_program(line, d);
  DualLipschitzResult best{std::max(0.0, std::max(fc, fd)), fc >= fd ? c : d, true};
  for (int it = 0; it < 100 && b - a > tol; ++it) {
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - g * (b - a);
      fc = dual_lipschitz_program(line, c);
      if (fc > best.value) best = {fc, c, true};
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + g * (b - a);
      fd = dual_lipschitz_program(line, d);
      if (fd > best.value) best = {fd, d, true};
    }
  }
  return best;
}

EmpiricalLaw1D weighted_law(std::span<const double> values, std::span<const double> weights) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return values[i] < values[j]; });
  double total = 0.0;
  for (double w : weights) total += w;
  EmpiricalLaw1D law;
  for (std::size_t i : order) {
    if (weights[i] == 0.0) continue;
    if (!law.x.empty() && law.x.back() == values[i]) {
      law.w.back() += weights[i] / total;
    } else {
      law.x.push_back(values[i]);
      law.w.push_back(weights[i] / total);
    }
  }
  return law;
}

// 1-Lipschitz projections of R^d used by the multi-dimensional lower bound.
std::vector<std::function<double(const Vector&)>> projection_dictionary(int dim, int random_directions,
                                                                        std::uint64_t seed) {
  std::vector<std::function<double(const Vector&)>> dict;
  for (int j = 0; j < std::min(dim, 8); ++j) dict.emplace_back([j](const Vector& v) { return v[j]; });
  if (dim > 1) dict.emplace_back([](const Vector& v) { return v.norm(); });
  for (int r = 0; r < (dim > 1 ? random_directions : 0); ++r) {
    Stream stream(seed, static_cast<std::uint64_t>(r), 0, StreamPurpose::kSampler);
    Vector dir(dim);
    for (int j = 0; j < dim; ++j) dir[j] = stream.normal();
    dir.normalize();
    dict.emplace_back([dir](const Vector& v) { return dir.dot(v); });
  }
  return dict;
}

DualLipschitzResult weighted_lower_bound(const std::vector<Vector>& a, std::span<const double> wa,
                                         const std::vector<Vector>& b, std::span<const double> wb,
                                         int random_directions, std::uint64_t seed, double tol,
                                         std::size_t* best_index = nullptr) {
  if (a.empty() || b.empty()) throw DegenerateInputError(kModule, "dual-Lipschitz distance of an empty measure");
  const int dim = static_cast<int>(a.front().size());
  const auto dict = projection_dictionary(dim, random_directions, seed);
  DualLipschitzResult best{0.0, 0.0, dim == 1};
  std::vector<double> va(a.size()), vb(b.size());
  for (std::size_t q = 0; q < dict.size(); ++q) {
    for (std::size_t i = 0; i < a.size(); ++i) va[i] = dict[q](a[i]);
    for (std::size_t i = 0; i < b.size(); ++i) vb[i] = dict[q](b[i]);
    const auto r = maximize_over_lipschitz(signed_merge(weighted_law(va, wa), weighted_law(vb, wb)), tol);
    if (q == 0 || r.value > best.value) {
      best.value = r.value;
      best.lipschitz = r.lipschitz;
      if (best_index) *best_index = q;
    }
  }
  return best;
}

Vector concat(std::span<const StateVector> window) {
  int n = 0;
  for (const auto& s : window) n += s.size();
  Vector v(n);
  int pos = 0;
  for (const auto& s : window) {
    v.segment(pos, s.size()) = s.coeffs;
    pos += s.size();
  }
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// Models and initial laws

KickedSystem make_kicked(SystemSpec spec, KickLaw law) {
  validate_law(law, spec);
  return KickedSystem{std::move(spec), std::move(law)};
}

int model_dim(const Model& model) {
  return std::visit(Overloaded{[](const KickedSystem& s) { return s.spec.n_dim; },
                               [](const FiniteChain&) { return 1; }},
                    model);
}

BasisId model_basis(const Model& model) {
  return std::visit(Overloaded{[](const KickedSystem& s) { return s.spec.basis; },
                               [](const FiniteChain&) { return BasisId::kChainState; }},
                    model);
}

std::string model_name(const Model& model) {
  return std::visit(Overloaded{[](const KickedSystem& s) { return s.spec.name; },
                               [](const FiniteChain& c) { return "chain" + std::to_string(c.size()); }},
                    model);
}

StateVector chain_state(int index) { return StateVector(Vector::Constant(1, index), BasisId::kChainState); }

int chain_index(const StateVector& u) { return static_cast<int>(u.coeffs[0]); }

StateVector model_step(const Model& model, const StateVector& u, Stream& stream) {
  return std::visit(Overloaded{[&](const KickedSystem& s) {
                                 StateVector next = s.spec.step(u);
                                 next.coeffs += sample_kick(s.law, stream, s.spec.basis).coeffs;
                                 if (!next.all_finite()) {
                                   throw NumericalInstabilityError(kModule, "non-finite state after a step of " +
                                                                                s.spec.name);
                                 }
                                 return next;
                               },
                               [&](const FiniteChain& c) {
                                 return chain_state(sample_categorical(c.P.row(chain_index(u)).transpose(), stream));
                               }},
                    model);
}

StateVector model_step(const Model& model, const StateVector& u, std::uint64_t seed, std::size_t m, int k) {
  Stream stream(seed, m, static_cast<std::uint64_t>(k), StreamPurpose::kKick);
  return model_step(model, u, stream);
}

InitialLaw InitialLaw::point_mass(Vector u) {
  InitialLaw law;
  law.kind = Kind::kPoint;
  law.point = std::move(u);
  return law;
}

InitialLaw InitialLaw::gaussian(Vector mean, Vector scales) {
  InitialLaw law;
  law.kind = Kind::kGaussian;
  law.mean = std::move(mean);
  law.scales = std::move(scales);
  return law;
}

InitialLaw InitialLaw::burned_in(Vector start, int steps) {
  InitialLaw law;
  law.kind = Kind::kBurnIn;
  law.point = std::move(start);
  law.burn_in = steps;
  return law;
}

InitialLaw InitialLaw::categorical(Vector probs) {
  InitialLaw law;
  law.kind = Kind::kCategorical;
  law.probs = std::move(probs);
  return law;
}

const char* initial_kind_name(InitialLaw::Kind kind) {
  switch (kind) {
    case InitialLaw::Kind::kPoint:
      return "point";
    case InitialLaw::Kind::kGaussian:
      return "gaussian";
    case InitialLaw::Kind::kBurnIn:
      return "burn_in";
    case InitialLaw::Kind::kCategorical:
      return "categorical";
  }
  return "point";
}

InitialLaw::Kind initial_kind_from_string(const std::string& name) {
  if (name == "point") return InitialLaw::Kind::kPoint;
  if (name == "gaussian") return InitialLaw::Kind::kGaussian;
  if (name == "burn_in") return InitialLaw::Kind::kBurnIn;
  if (name == "categorical") return InitialLaw::Kind::kCategorical;
  throw ConfigurationError(kModule, "unknown initial law '" + name + "'");
}

StateVector sample_initial(const InitialLaw& init, const Model& model, std::uint64_t seed, std::size_t m) {
  const int dim = model_dim(model);
  const BasisId basis = model_basis(model);
  const bool chain = std::holds_alternative<FiniteChain>(model);
  auto check_dim = [&](const Vector& v, const char* what) {
    if (v.size() != dim) {
      throw ConfigurationError(kModule, std::string("initial ") + what + " has " + std::to_string(v.size()) +
                                            " coordinates, model has " + std::to_string(dim));
    }
  };
  switch (init.kind) {
    case InitialLaw::Kind::kPoint:
      check_dim(init.point, "point");
      return StateVector(init.point, basis);
    case InitialLaw::Kind::kGaussian: {
      if (chain) throw ConfigurationError(kModule, "Gaussian initial law on a finite chain");
      check_dim(init.mean, "mean");
      check_dim(init.scales, "scales");
      Stream stream(seed, m, 0, StreamPurpose::kInitial);
      Vector v(dim);
      for (int j = 0; j < dim; ++j) v[j] = init.mean[j] + init.scales[j] * stream.normal();
      return StateVector(v, basis);
    }
    case InitialLaw::Kind::kBurnIn: {
      check_dim(init.point, "burn-in start");
      if (init.burn_in < 0) throw ConfigurationError(kModule, "burn-in length must be >= 0");
      StateVector u(init.point, basis);
      for (int j = 1; j <= init.burn_in; ++j) {
        Stream stream(seed, m, static_cast<std::uint64_t>(j), StreamPurpose::kBurnIn);
        u = model_step(model, u, stream);
      }
      return u;
    }
    case InitialLaw::Kind::kCategorical: {
      if (!chain) throw ConfigurationError(kModule, "categorical initial law needs a finite chain");
      const auto& c = std::get<FiniteChain>(model);
      if (init.probs.size() != c.size() || (init.probs.array() < 0.0).any() ||
          std::abs(init.probs.sum() - 1.0) > 1e-12) {
        throw ConfigurationError(kModule, "categorical initial law must be a probability vector on the chain states");
      }
      Stream stream(seed, m, 0, StreamPurpose::kInitial);
      return chain_state(sample_categorical(init.probs, stream));
    }
  }
  throw ConfigurationError(kModule, "unknown initial law");
}

InitialCertificate certify_initial_law(const InitialLaw& init, const KickedSystem& system, double delta,
                                       std::size_t n, std::uint64_t seed, int workers) {
  if (!(delta > 0.0) || n < 2) throw ConfigurationError(kModule, "certificate needs delta > 0 and n >= 2");
  const Model model = system;
  const std::size_t total = 10 * n;
  std::vector<double> log_w(total);
  parallel_for(total, workers, [&](std::size_t i) {
    log_w[i] = delta * system.spec.phi(sample_initial(init, model, seed, i));
  });
  LogWeightAccumulator small, big;
  for (std::size_t i = 0; i < total; ++i) {
    if (i < n) small.add(log_w[i]);
    big.add(log_w[i]);
  }
  InitialCertificate cert;
  cert.estimate = std::exp(big.log_mean());
  cert.stderr_ = cert.estimate * big.log_mean_stderr();
  cert.small_sample_estimate = std::exp(small.log_mean());
  const double combined = std::hypot(small.log_mean_stderr(), big.log_mean_stderr());
  cert.stable = std::abs(small.log_mean() - big.log_mean()) <= 3.0 * combined + 1e-12;
  cert.m_bound = cert.estimate + 3.0 * cert.stderr_;
  return cert;
}

// ---------------------------------------------------------------------------
// Ensembles, windows and occupation measures

TrajectoryEnsemble simulate(const Model& model, const InitialLaw& init, std::size_t M, int K, std::uint64_t seed,
                            int workers) {
  if (M < 1 || K < 1) throw ConfigurationError(kModule, "simulate needs M >= 1 and K >= 1");
  TrajectoryEnsemble ens;
  ens.M = M;
  ens.K = K;
  ens.seed = seed;
  ens.spec_id = model_name(model);
  if (const auto* s = std::get_if<KickedSystem>(&model)) {
    ens.law_id = std::string(family_name(s->law.family)) + "/" + std::to_string(s->law.dim());
  } else {
    ens.law_id = "chain";
  }
  const std::size_t row = static_cast<std::size_t>(K) + 1;
  ens.states.resize(M * row);
  parallel_for(M, workers, [&](std::size_t m) {
    StateVector u = sample_initial(init, model, seed, m);
    ens.states[m * row] = u;
    for (int k = 1; k <= K; ++k) {
      try {
        u = model_step(model, u, seed, m, k);
      } catch (const NumericalInstabilityError& e) {
        throw NumericalInstabilityError(kModule, std::string(e.what()) + " (trajectory " + std::to_string(m) +
                                                     ", step " + std::to_string(k) + ")");
      }
      ens.states[m * row + static_cast<std::size_t>(k)] = u;
    }
  });
  return ens;
}

WindowedEnsemble ell_process(const TrajectoryEnsemble& ensemble, int ell) {
  if (ell < 1 || ell > ensemble.K + 1) {
    throw ConfigurationError(kModule, "window length must lie in [1, K + 1]");
  }
  return WindowedEnsemble{&ensemble, ell};
}

double OccupationMeasure::total_weight() const {
  const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  return static_cast<double>(total) / static_cast<double>(k);
}

double OccupationMeasure::integrate(const ObservableSpec& f) const {
  if (has_values()) throw ConfigurationError(kModule, "measure holds observable values; use integrate_values");
  double s = 0.0;
  for (std::size_t i = 0; i < windows.size(); ++i) s += f(std::span<const StateVector>(windows[i])) * weight(i);
  return s;
}

double OccupationMeasure::integrate_values(const std::function<double(double)>& g) const {
  double s = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) s += g(values[i]) * weight(i);
  return s;
}

OccupationMeasure occupation_measure(const TrajectoryEnsemble& ensemble, std::size_t m, int ell, std::size_t k,
                                     const ObservableSpec* observable) {
  const WindowedEnsemble win = ell_process(ensemble, ell);
  if (m >= ensemble.M) throw ConfigurationError(kModule, "trajectory index out of range");
  if (k < 1 || k > static_cast<std::size_t>(win.windows_per_path())) {
    throw ConfigurationError(kModule, "occupation measure needs 1 <= k <= K + 2 - ell windows");
  }
  OccupationMeasure mu;
  mu.ell = ell;
  mu.k = k;
  if (observable) {
    if (observable->ell != ell) throw ConfigurationError(kModule, "observable arity differs from the window length");
    std::map<double, std::size_t> hist;
    for (std::size_t j = 0; j < k; ++j) ++hist[(*observable)(win.window(m, static_cast<int>(j)))];
    for (const auto& [v, c] : hist) {
      mu.values.push_back(v);
      mu.counts.push_back(c);
    }
    return mu;
  }
  auto less = [](const std::vector<double>& a, const std::vector<double>& b) {
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
  };
  std::map<std::vector<double>, std::size_t, decltype(less)> index(less);
  for (std::size_t j = 0; j < k; ++j) {
    const auto w = win.window(m, static_cast<int>(j));
    const Vector flat = concat(w);
    std::vector<double> key(flat.data(), flat.data() + flat.size());
    const auto [it, inserted] = index.emplace(std::move(key), mu.windows.size());
    if (inserted) {
      mu.windows.emplace_back(w.begin(), w.end());
      mu.counts.push_back(0);
    }
    ++mu.counts[it->second];
  }
  return mu;
}

// ---------------------------------------------------------------------------
// Dual-Lipschitz distance

EmpiricalLaw1D empirical_1d(std::span<const double> samples) {
  if (samples.empty()) throw DegenerateInputError(kModule, "empirical law of an empty sample");
  std::vector<double> ones(samples.size(), 1.0);
  return weighted_law(samples, ones);
}

EmpiricalLaw1D to_empirical(const OccupationMeasure& mu) {
  if (!mu.has_values()) throw ConfigurationError(kModule, "occupation measure carries windows, not values");
  EmpiricalLaw1D law;
  law.x = mu.values;
  for (std::size_t i = 0; i < mu.counts.size(); ++i) law.w.push_back(mu.weight(i));
  return law;
}

double dual_lipschitz_1d_at(const EmpiricalLaw1D& mu, const EmpiricalLaw1D& nu, double L) {
  return dual_lipschitz_program(signed_merge(mu, nu), L);
}

DualLipschitzResult dual_lipschitz_1d(const EmpiricalLaw1D& mu, const EmpiricalLaw1D& nu) {
  if (mu.x.empty() || nu.x.empty()) throw DegenerateInputError(kModule, "dual-Lipschitz distance of an empty measure");
  return maximize_over_lipschitz(signed_merge(mu, nu), 1e-15);
}

DualLipschitzResult dual_lipschitz_lower_bound(std::span<const StateVector> mu, std::span<const StateVector> nu,
                                               int random_directions, std::uint64_t seed) {
  std::vector<Vector> a, b;
  for (const auto& s : mu) a.push_back(s.coeffs);
  for (const auto& s : nu) b.push_back(s.coeffs);
  const std::vector<double> wa(a.size(), 1.0), wb(b.size(), 1.0);
  return weighted_lower_bound(a, wa, b, wb, random_directions, seed, 1e-12);
}

DualLipschitzResult dual_lipschitz_distance(const OccupationMeasure& mu, const OccupationMeasure& nu) {
  if (mu.support_size() == 0 || nu.support_size() == 0) {
    throw DegenerateInputError(kModule, "dual-Lipschitz distance of an empty measure");
  }
  if (mu.has_values() && nu.has_values()) return dual_lipschitz_1d(to_empirical(mu), to_empirical(nu));
  if (mu.has_values() != nu.has_values()) throw ConfigurationError(kModule, "measures live on different spaces");
  std::vector<Vector> a, b;
  std::vector<double> wa, wb;
  for (std::size_t i = 0; i < mu.windows.size(); ++i) {
    a.push_back(concat(mu.windows[i]));
    wa.push_back(mu.weight(i));
  }
  for (std::size_t i = 0; i < nu.windows.size(); ++i) {
    b.push_back(concat(nu.windows[i]));
    wb.push_back(nu.weight(i));
  }
  if (a.front().size() != b.front().size()) throw ConfigurationError(kModule, "measures live on different spaces");
  return weighted_lower_bound(a, wa, b, wb, 8, 1, 1e-12);
}

// ---------------------------------------------------------------------------
// Mixing

MixingReport mixing_rate(const Model& model, const InitialLaw& init_a, const InitialLaw& init_b, int K,
                         std::size_t M, std::uint64_t seed, int workers, const MixingOptions& options) {
  if (K < 2 || M < 2) throw ConfigurationError(kModule, "mixing_rate needs K >= 2 and M >= 2");
  // Common random numbers: both ensembles use the same kick streams, so the
  // difference of the empirical marginals carries little sampling noise.
  const TrajectoryEnsemble ea = simulate(model, init_a, M, K, seed, workers);
  const TrajectoryEnsemble eb = simulate(model, init_b, M, K, seed, workers);
  const bool chain = std::holds_alternative<FiniteChain>(model);
  const bool one_d = options.projection != nullptr || chain || model_dim(model) == 1;

  // Bootstrap multiplicities of trajectory pairs, shared across k.
  std::vector<std::vector<double>> mult(static_cast<std::size_t>(options.bootstrap), std::vector<double>(M, 0.0));
  for (int b = 0; b < options.bootstrap; ++b) {
    Stream stream(seed, static_cast<std::uint64_t>(b), 0, StreamPurpose::kBootstrap);
    for (std::size_t i = 0; i < M; ++i) mult[static_cast<std::size_t>(b)][stream.uniform_index(M)] += 1.0;
  }

  MixingReport report;
  report.exact = one_d;
  const std::vector<double> unit(M, 1.0);
  const Vector chain_f = chain ? std::get<FiniteChain>(model).f : Vector();
  auto scalar = [&](const StateVector& u) {
    if (options.projection) return (*options.projection)(u);
    if (chain) return chain_f[chain_index(u)];
    return u.coeffs[0];
  };
  const auto dict = one_d ? std::vector<std::function<double(const Vector&)>>{}
                          : projection_dictionary(model_dim(model), options.random_directions, seed);
  std::vector<double> va(M), vb(M);
  for (int k = 0; k <= K; ++k) {
    MixingPoint pt;
    pt.k = k;
    std::function<double(const StateVector&)> proj;
    double L = 0.0;
    if (one_d) {
      proj = scalar;
    } else {
      std::size_t best = 0;
      double best_value = -1.0;
      for (std::size_t q = 0; q < dict.size(); ++q) {
        for (std::size_t m = 0; m < M; ++m) {
          va[m] = dict[q](ea.at(m, k).coeffs);
          vb[m] = dict[q](eb.at(m, k).coeffs);
        }
        const auto r = maximize_over_lipschitz(signed_merge(weighted_law(va, unit), weighted_law(vb, unit)), 1e-8);
        if (r.value > best_value) {
          best_value = r.value;
          best = q;
        }
      }
      proj = [&dict, best](const StateVector& u) { return dict[best](u.coeffs); };
    }
    for (std::size_t m = 0; m < M; ++m) {
      va[m] = proj(ea.at(m, k));
      vb[m] = proj(eb.at(m, k));
    }
    std::vector<std::size_t> order(2 * M);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t i, std::size_t j) { return (i < M ? va[i] : vb[i - M]) < (j < M ? va[j] : vb[j - M]); });
    const auto r = maximize_over_lipschitz(signed_merge_sorted(order, va, vb, unit), 1e-10);
    pt.distance = r.value;
    L = r.lipschitz;
    // Replicates evaluate the inner program at the full-sample optimum L.
    MeanAccumulator acc;
    for (int b = 0; b < options.bootstrap; ++b) {
      acc.add(dual_lipschitz_program(signed_merge_sorted(order, va, vb, mult[static_cast<std::size_t>(b)]), L));
    }
    pt.stderr_ = std::sqrt(acc.variance());
    report.curve.push_back(pt);
  }

  report.fit_begin = options.fit_begin;
  report.fit_end = report.fit_begin - 1;
  for (int k = report.fit_begin; k <= K; ++k) {
    const auto& pt = report.curve[static_cast<std::size_t>(k)];
    if (!(pt.distance > 0.0) || pt.distance < 3.0 * pt.stderr_) break;
    report.fit_end = k;
  }
  const int points = report.fit_end - report.fit_begin + 1;
  if (points < 3) {
    report.inconclusive = true;
    report.note = points <= 0 ? "distance below the noise floor from the first fitted step"
                              : "fewer than 3 steps above the noise floor";
    return report;
  }
  std::vector<double> xs, ys;
  report.strictly_decreasing = true;
  for (int k = report.fit_begin; k <= report.fit_end; ++k) {
    const double d = report.curve[static_cast<std::size_t>(k)].distance;
    if (k > report.fit_begin && !(d < report.curve[static_cast<std::size_t>(k) - 1].distance)) {
      report.strictly_decreasing = false;
    }
    xs.push_back(k);
    ys.push_back(std::log(d));
  }
  const LinearFit fit = fit_line(xs, ys);
  report.gamma_hat = -fit.slope;
  report.gamma_stderr = fit.slope_stderr;
  report.r_squared = fit.r_squared;
  return report;
}

// ---------------------------------------------------------------------------
// Lyapunov bounds

namespace {

struct LyapunovBlock {
  MeanAccumulator phi0;
  LogWeightAccumulator sum_init;  // exp(kappa_1 (1-q)^{-1} Phi(u_0))
  std::vector<LogWeightAccumulator> point_init;  // exp(q^k delta Phi(u_0))
  std::vector<MeanAccumulator> phi;
  std::vector<LogWeightAccumulator> sum_moment, point_moment;
  MeanAccumulator kick_phi;
  LogWeightAccumulator kick_moment;

  explicit LyapunovBlock(int K)
      : point_init(static_cast<std::size_t>(K) + 1),
        phi(static_cast<std::size_t>(K) + 1),
        sum_moment(static_cast<std::size_t>(K) + 1),
        point_moment(static_cast<std::size_t>(K) + 1) {}

  void merge(const LyapunovBlock& o) {
    phi0.merge(o.phi0);
    sum_init.merge(o.sum_init);
    kick_phi.merge(o.kick_phi);
    kick_moment.merge(o.kick_moment);
    for (std::size_t k = 0; k < phi.size(); ++k) {
      point_init[k].merge(o.point_init[k]);
      phi[k].merge(o.phi[k]);
      sum_moment[k].merge(o.sum_moment[k]);
      point_moment[k].merge(o.point_moment[k]);
    }
  }
};

}  // namespace

LyapunovReport lyapunov_check(const KickedSystem& system, const InitialLaw& init, int K, std::size_t M,
                              std::uint64_t seed, int workers) {
  if (K < 1 || M < 2) throw ConfigurationError(kModule, "lyapunov_check needs K >= 1 and M >= 2");
  const auto& spec = system.spec;
  const double q = spec.constants.q, C = spec.constants.c_phi, delta = system.law.delta;
  LyapunovReport report;
  report.kappa_sum = delta * (1.0 - q) / C;
  report.kappa_point = delta / C;
  const Model model = system;
  std::vector<LyapunovBlock> blocks(block_count(M), LyapunovBlock(K));
  parallel_blocks(M, workers, [&](std::size_t b, std::size_t begin, std::size_t end) {
    LyapunovBlock& blk = blocks[b];
    for (std::size_t m = begin; m < end; ++m) {
      Stream ks(seed, m, 0, StreamPurpose::kSampler);
      const double phi_eta = spec.phi(sample_kick(system.law, ks, spec.basis));
      blk.kick_phi.add(phi_eta);
      blk.kick_moment.add(delta * phi_eta);

      StateVector u = sample_initial(init, model, seed, m);
      const double phi_u0 = spec.phi(u);
      blk.phi0.add(phi_u0);
      blk.sum_init.add(report.kappa_sum / (1.0 - q) * phi_u0);
      double sum = phi_u0;
      for (int k = 0; k <= K; ++k) {
        if (k > 0) {
          u = model_step(model, u, seed, m, k);
          sum += spec.phi(u);
        }
        const double phi_k = spec.phi(u);
        const auto kk = static_cast<std::size_t>(k);
        blk.point_init[kk].add(std::pow(q, k) * delta * phi_u0);
        blk.phi[kk].add(phi_k);
        blk.sum_moment[kk].add(report.kappa_sum * sum);
        blk.point_moment[kk].add(report.kappa_point * phi_k);
      }
    }
  });
  LyapunovBlock total(K);
  for (const auto& blk : blocks) total.merge(blk);

  report.kick_phi_mean = total.kick_phi.mean;
  report.log_kick_moment = total.kick_moment.log_mean();
  const double kick_se = total.kick_phi.stderr_();
  for (int k = 0; k <= K; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    LyapunovRow row;
    row.k = k;
    row.phi_mean = total.phi[kk].mean;
    row.phi_bound = std::pow(q, k) * total.phi0.mean + C / (1.0 - q) * report.kick_phi_mean;
    row.phi_stderr = std::hypot(total.phi[kk].stderr_(),
                                std::pow(q, k) * total.phi0.stderr_() + C / (1.0 - q) * kick_se);
    row.log_sum_moment = total.sum_moment[kk].log_mean();
    row.log_sum_bound = k * report.log_kick_moment + total.sum_init.log_mean();
    row.log_point_moment = total.point_moment[kk].log_mean();
    row.log_point_bound = report.log_kick_moment / (1.0 - q) + total.point_init[kk].log_mean();
    row.log_stderr = std::hypot(total.point_moment[kk].log_mean_stderr(),
                                total.kick_moment.log_mean_stderr() / (1.0 - q));
    if (row.phi_mean - row.phi_bound > 3.0 * row.phi_stderr) ++report.violations;
    const double sum_se = std::hypot(total.sum_moment[kk].log_mean_stderr(), k * total.kick_moment.log_mean_stderr());
    if (row.log_point_moment - row.log_point_bound > 3.0 * row.log_stderr ||
        row.log_sum_moment - row.log_sum_bound > 3.0 * sum_se) {
      ++report.exp_violations;
    }
    report.rows.push_back(row);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Recurrence, stabilisability and tightness

HittingReport hitting_time_moments(const KickedSystem& system, const StateVector& u0, double R, double gamma,
                                   std::size_t M, int horizon, std::uint64_t seed, int ell, int workers) {
  if (!(R > 0.0) || !(gamma > 0.0) || horizon < 1 || ell < 1 || M < 2) {
    throw ConfigurationError(kModule, "hitting_time_moments needs R, gamma > 0, horizon >= 1, ell >= 1, M >= 2");
  }
  system.spec.conform(u0);
  const Model model = system;
  std::vector<int> tau(M);
  std::vector<char> capped(M, 0);
  parallel_for(M, workers, [&](std::size_t m) {
    StateVector u = u0;
    int run = u_norm(u, system.spec) <= R ? 1 : 0;  // consecutive in-ball states ending at the current one
    // Window j covers u_j .. u_{j+ell-1}; it is inside when the run reaches ell at step j + ell - 1.
    for (int step = 0;; ++step) {
      if (run >= ell) {
        tau[m] = step - (ell - 1);
        return;
      }
      if (step - (ell - 1) >= horizon) {
        tau[m] = horizon;
        capped[m] = 1;
        return;
      }
      u = model_step(model, u, seed, m, step + 1);
      run = u_norm(u, system.spec) <= R ? run + 1 : 0;
    }
  });
  HittingReport report;
  report.u0_norm = u_norm(u0, system.spec);
  report.gamma = gamma;
  MeanAccumulator e, t;
  std::size_t n_capped = 0;
  for (std::size_t m = 0; m < M; ++m) {
    e.add(std::exp(gamma * tau[m]));
    t.add(tau[m]);
    n_capped += static_cast<std::size_t>(capped[m]);
  }
  report.estimate = e.mean;
  report.stderr_ = e.stderr_();
  report.mean_tau = t.mean;
  report.capped_fraction = static_cast<double>(n_capped) / static_cast<double>(M);
  report.flagged = report.capped_fraction > 0.01;
  return report;
}

StabilisabilityFit stabilisability_fit(const KickedSystem& system, const StateVector& u0, double delta, int K,
                                       std::size_t M, std::uint64_t seed, int workers) {
  if (K < 2 || M < 2 || !(delta > 0.0)) throw ConfigurationError(kModule, "stabilisability_fit needs K >= 2, M >= 2, delta > 0");
  system.spec.conform(u0);
  const Model model = system;
  std::vector<std::vector<LogWeightAccumulator>> blocks(block_count(M),
                                                        std::vector<LogWeightAccumulator>(static_cast<std::size_t>(K)));
  parallel_blocks(M, workers, [&](std::size_t b, std::size_t begin, std::size_t end) {
    for (std::size_t m = begin; m < end; ++m) {
      StateVector u = u0;
      double sum = 0.0;
      for (int k = 1; k <= K; ++k) {
        u = model_step(model, u, seed, m, k);
        sum += system.spec.frak_p(u);
        blocks[b][static_cast<std::size_t>(k) - 1].add(delta * sum);
      }
    }
  });
  StabilisabilityFit fit;
  fit.delta = delta;
  std::vector<double> ks;
  for (int k = 1; k <= K; ++k) {
    LogWeightAccumulator acc;
    for (const auto& blk : blocks) acc.merge(blk[static_cast<std::size_t>(k) - 1]);
    fit.log_curve.push_back(acc.log_mean());
    ks.push_back(k);
  }
  const LinearFit line = fit_line(ks, fit.log_curve);
  fit.c = line.slope;
  fit.log_q = line.intercept;
  fit.r_squared = line.r_squared;
  return fit;
}

HittingGrowthFit hitting_growth_fit(const KickedSystem& system, const std::vector<StateVector>& starts, double R,
                                    double gamma, std::size_t M, int horizon, std::uint64_t seed, int m,
                                    int workers) {
  if (starts.empty() || m < 1) throw ConfigurationError(kModule, "hitting_growth_fit needs starts and m >= 1");
  HittingGrowthFit fit;
  fit.m = m;
  for (std::size_t i = 0; i < starts.size(); ++i) {
    fit.table.push_back(hitting_time_moments(system, starts[i], R, gamma, M, horizon, seed + i, 1, workers));
    const double phi_m = std::pow(system.spec.phi(starts[i]), m);
    fit.C = std::max(fit.C, fit.table.back().estimate / phi_m);
  }
  fit.dominated = true;
  for (std::size_t i = 0; i < starts.size(); ++i) {
    const double phi_m = std::pow(system.spec.phi(starts[i]), m);
    if (fit.table[i].estimate > fit.C * phi_m * (1.0 + 1e-12)) fit.dominated = false;
  }
  return fit;
}

TightnessReport tightness_functional(const TrajectoryEnsemble& ensemble, const SystemSpec& spec, double gamma_exp) {
  if (ensemble.K < 3) throw ConfigurationError(kModule, "tightness_functional needs K >= 3");
  if (!(gamma_exp > 0.0)) throw ConfigurationError(kModule, "tightness exponent must be positive");
  TightnessReport report;
  report.gamma_exp = gamma_exp;
  std::vector<LogWeightAccumulator> acc(static_cast<std::size_t>(ensemble.K) + 1);
  for (std::size_t m = 0; m < ensemble.M; ++m) {
    double sum = 0.0;
    for (int k = 2; k <= ensemble.K; ++k) {
      sum += gamma_exp * std::log1p(u_norm(ensemble.at(m, k), spec));
      acc[static_cast<std::size_t>(k)].add(sum);
    }
  }
  std::vector<double> ks;
  double worst_se = 0.0;
  for (int k = 2; k <= ensemble.K; ++k) {
    const auto& a = acc[static_cast<std::size_t>(k)];
    report.log_curve.push_back(a.log_mean());
    report.ess.push_back(a.ess());
    worst_se = std::max(worst_se, a.log_mean_stderr());
    ks.push_back(k);
  }
  report.fit = fit_line(ks, report.log_curve);
  const double min_ess = *std::min_element(report.ess.begin(), report.ess.end());
  if (min_ess < std::max(10.0, 0.01 * static_cast<double>(ensemble.M)) || worst_se > 0.5) {
    report.diverging = true;
    report.note = "weights collapse: effective sample size " + std::to_string(min_ess) + " of " +
                  std::to_string(ensemble.M);
  }
  return report;
}

}  // namespace kicklab
