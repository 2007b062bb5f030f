#include "qdt/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "qdt/errors.hpp"
#include "qdt/relabel.hpp"
#include "qdt/rng.hpp"

namespace qdt {

namespace {

std::string fmt_double(double x) {
  // Shortest representation that parses back to the same double.
  return nlohmann::json(x).dump();
}

std::uint64_t derive_seed(std::uint64_t master, int seed_idx,
                          std::uint64_t stream) {
  return nn::mix64(master ^ nn::mix64((static_cast<std::uint64_t>(seed_idx) << 8) ^
                                      stream));
}

double mean_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

double stddev_of(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean_of(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

// Runs jobs 0..n-1 on a small pool; each job writes only its own slots.
void parallel_for_jobs(int n_jobs, const std::function<void(int)>& job) {
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const int n_workers = static_cast<int>(std::min<unsigned>(hw, n_jobs));
  if (n_workers <= 1) {
    for (int i = 0; i < n_jobs; ++i) job(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> workers;
  workers.reserve(n_workers);
  for (int w = 0; w < n_workers; ++w) {
    workers.emplace_back([&]() {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= n_jobs) return;
        job(i);
      }
    });
  }
  for (std::thread& t : workers) t.join();
}

}  // namespace

std::vector<double> ExperimentResult::scores(const std::string& agent,
                                             const std::string& protocol,
                                             const std::string& variant) const {
  std::vector<double> out;
  for (const ScoreRow& r : rows) {
    if (r.agent == agent && r.protocol == protocol && r.variant == variant) {
      out.push_back(r.score);
    }
  }
  return out;
}

double ExperimentResult::mean(const std::string& agent,
                              const std::string& protocol,
                              const std::string& variant) const {
  return mean_of(scores(agent, protocol, variant));
}

double ExperimentResult::stddev(const std::string& agent,
                                const std::string& protocol,
                                const std::string& variant) const {
  return stddev_of(scores(agent, protocol, variant));
}

std::uint64_t ExperimentResult::config_hash() const {
  const std::string s = config.dump();
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

nlohmann::json ExperimentResult::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const ScoreRow& r : rows) {
    rows_json.push_back({{"agent", r.agent},
                         {"seed", r.seed},
                         {"protocol", r.protocol},
                         {"score", r.score},
                         {"variant", r.variant}});
  }
  return {{"id", id},
          {"config", config},
          {"n_seeds", n_seeds},
          {"std_undefined", std_undefined},
          {"wall_seconds", wall_seconds},
          {"rows", rows_json},
          {"failures", failures},
          {"config_hash", config_hash()}};
}

nlohmann::json PipelineConfig::to_json() const {
  return {{"env", env_name},
          {"env_seed", env_seed},
          {"n_episodes", n_episodes},
          {"filter_threshold", filter_threshold},
          {"cql", cql.to_json()},
          {"dt", dt.to_json()},
          {"eval_every", eval_every},
          {"eval_episodes", eval_episodes}};
}

PipelineOutcome run_pipeline(const PipelineConfig& cfg, const Env& env,
                             const OfflineDataset& ds, std::uint64_t seed) {
  PipelineOutcome out;
  out.data_max_return = ds.stats().max_return;
  const std::uint64_t cql_seed = nn::mix64(seed ^ 0xC01);
  const std::uint64_t dt_seed = nn::mix64(seed ^ 0xD70);

  auto eval_cql = [&](TwinQFunction& twinq) {
    double total = 0.0;
    for (int e = 0; e < cfg.eval_episodes; ++e) {
      total += greedy_rollout(twinq, env, static_cast<std::uint64_t>(e));
    }
    return total / cfg.eval_episodes;
  };
  auto eval_dt = [&](DtModel& model) {
    double total = 0.0;
    for (int e = 0; e < cfg.eval_episodes; ++e) {
      total += conditioned_rollout(model, env, cfg.dt.rtg_conditioning,
                                   static_cast<std::uint64_t>(e));
    }
    return total / cfg.eval_episodes;
  };

  AgentScores cql_scores{-std::numeric_limits<double>::infinity(), 0.0};
  TwinQFunction twinq = train_cql(
      ds, cfg.cql, cql_seed,
      [&](int /*step*/, TwinQFunction& q) {
        const double score = eval_cql(q);
        cql_scores.best = std::max(cql_scores.best, score);
        cql_scores.last = score;
      },
      cfg.eval_every);
  out.cql = cql_scores;

  auto [relabelled, report] = relabel_dataset(ds, make_value_fn(twinq, env),
                                              "cql-seed-" + std::to_string(seed));
  (void)report;

  auto train_eval_dt = [&](const OfflineDataset& data) {
    AgentScores scores{-std::numeric_limits<double>::infinity(), 0.0};
    DtModel model = train_dt(
        data, cfg.dt, dt_seed,
        [&](int /*step*/, DtModel& m) {
          const double score = eval_dt(m);
          scores.best = std::max(scores.best, score);
          scores.last = score;
        },
        cfg.eval_every);
    return scores;
  };

  out.dt = train_eval_dt(ds);
  out.qdt = train_eval_dt(relabelled);
  return out;
}

namespace {

struct SeedJobResult {
  bool ok = false;
  std::string error;
  PipelineOutcome outcome;
};

void push_outcome_rows(std::vector<ScoreRow>& rows, const PipelineOutcome& o,
                       int seed, const std::string& variant,
                       bool with_data_max) {
  for (const auto& [agent, scores] :
       {std::pair<const char*, AgentScores>{"cql", o.cql},
        {"dt", o.dt},
        {"qdt", o.qdt}}) {
    rows.push_back({agent, seed, "best", scores.best, variant});
    rows.push_back({agent, seed, "last", scores.last, variant});
  }
  if (with_data_max) {
    rows.push_back({"max_in_dataset", seed, "data", o.data_max_return, variant});
  }
}

}  // namespace

ExperimentResult run_table1(int seeds, std::uint64_t master_seed,
                            PipelineConfig base) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentResult result;
  result.id = "table1";
  result.n_seeds = seeds;
  result.std_undefined = seeds == 1;
  result.config = {{"experiment", "table1"},
                   {"seeds", seeds},
                   {"master_seed", master_seed},
                   {"pipeline", base.to_json()}};

  std::vector<SeedJobResult> outcomes(seeds);
  parallel_for_jobs(seeds, [&](int i) {
    try {
      std::unique_ptr<Env> env = make_env(base.env_name, base.env_seed);
      const OfflineDataset ds = generate_random_filtered(
          *env, base.n_episodes, base.filter_threshold,
          derive_seed(master_seed, i, 1));
      outcomes[i].outcome =
          run_pipeline(base, *env, ds, derive_seed(master_seed, i, 2));
      outcomes[i].ok = true;
    } catch (const std::exception& e) {
      outcomes[i].error = "seed " + std::to_string(i) + ": " + e.what();
    }
  });
  for (int i = 0; i < seeds; ++i) {
    if (outcomes[i].ok) {
      push_outcome_rows(result.rows, outcomes[i].outcome, i, "", false);
    } else {
      result.failures.push_back(outcomes[i].error);
    }
  }
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return result;
}

ExperimentResult run_delayed(int seeds, std::uint64_t master_seed,
                             PipelineConfig base) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentResult result;
  result.id = "delayed";
  result.n_seeds = seeds;
  result.std_undefined = seeds == 1;
  result.config = {{"experiment", "delayed"},
                   {"seeds", seeds},
                   {"master_seed", master_seed},
                   {"pipeline", base.to_json()}};

  const std::vector<std::string> variants = {"dense", "delayed"};
  const int n_jobs = seeds * 2;
  std::vector<SeedJobResult> outcomes(n_jobs);
  parallel_for_jobs(n_jobs, [&](int j) {
    const int i = j / 2;
    const std::string& variant = variants[j % 2];
    try {
      std::string env_name = base.env_name;
      if (variant == "delayed") env_name += "-delayed";
      std::unique_ptr<Env> env = make_env(env_name, base.env_seed);
      // Same data seed for both variants: identical behaviour, only the
      // reward timing differs.
      const OfflineDataset ds = generate_random_filtered(
          *env, base.n_episodes, base.filter_threshold,
          derive_seed(master_seed, i, 1));
      outcomes[j].outcome =
          run_pipeline(base, *env, ds, derive_seed(master_seed, i, 2));
      outcomes[j].ok = true;
    } catch (const std::exception& e) {
      outcomes[j].error =
          variant + " seed " + std::to_string(i) + ": " + e.what();
    }
  });
  for (int j = 0; j < n_jobs; ++j) {
    if (outcomes[j].ok) {
      push_outcome_rows(result.rows, outcomes[j].outcome, j / 2,
                        variants[j % 2], false);
    } else {
      result.failures.push_back(outcomes[j].error);
    }
  }
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return result;
}

ExperimentResult run_topx(std::vector<double> x_list, int seeds,
                          std::uint64_t master_seed, PipelineConfig base) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentResult result;
  result.id = "topx";
  result.n_seeds = seeds;
  result.std_undefined = seeds == 1;
  result.config = {{"experiment", "topx"},
                   {"seeds", seeds},
                   {"master_seed", master_seed},
                   {"x_list", x_list},
                   {"pipeline", base.to_json()}};

  const int n_jobs = static_cast<int>(x_list.size()) * seeds;
  std::vector<SeedJobResult> outcomes(n_jobs);
  std::vector<std::string> variants(n_jobs);
  parallel_for_jobs(n_jobs, [&](int j) {
    const int xi = j / seeds;
    const int i = j % seeds;
    const double x = x_list[xi];
    std::ostringstream variant;
    variant << "X=" << x;
    variants[j] = variant.str();
    try {
      std::unique_ptr<Env> env = make_env(base.env_name, base.env_seed);
      const OptimalValues oracle = optimal_values(*env, base.cql.gamma);
      OfflineDataset ds = generate_epsilon_ramp(
          *env, oracle, base.n_episodes, derive_seed(master_seed, i, 1));
      if (x > 0.0) ds = remove_top_fraction(ds, x);
      outcomes[j].outcome =
          run_pipeline(base, *env, ds, derive_seed(master_seed, i, 2));
      outcomes[j].ok = true;
    } catch (const std::exception& e) {
      outcomes[j].error =
          variants[j] + " seed " + std::to_string(i) + ": " + e.what();
    }
  });
  for (int j = 0; j < n_jobs; ++j) {
    if (outcomes[j].ok) {
      push_outcome_rows(result.rows, outcomes[j].outcome, j % seeds,
                        variants[j], true);
    } else {
      result.failures.push_back(outcomes[j].error);
    }
  }
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return result;
}

namespace {

std::vector<std::string> distinct_variants(const ExperimentResult& r) {
  std::vector<std::string> out;
  for (const ScoreRow& row : r.rows) {
    if (std::find(out.begin(), out.end(), row.variant) == out.end()) {
      out.push_back(row.variant);
    }
  }
  if (out.empty()) out.push_back("");
  return out;
}

void write_markdown(const ExperimentResult& r, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  os << "# Experiment: " << r.id << "\n\n";
  os << "Seeds: " << r.n_seeds;
  if (r.std_undefined) os << " (single seed; std reported as 0)";
  os << "  \nWall clock: " << fmt_double(r.wall_seconds) << " s\n\n";
  for (const std::string& variant : distinct_variants(r)) {
    if (!variant.empty()) os << "## " << variant << "\n\n";
    os << "| protocol | CQL | DT | QDT |\n";
    os << "|---|---|---|---|\n";
    for (const std::string& protocol : {"best", "last"}) {
      os << "| " << protocol;
      for (const std::string& agent : {"cql", "dt", "qdt"}) {
        const auto xs = r.scores(agent, protocol, variant);
        if (xs.empty()) {
          os << " | -";
        } else {
          os << " | " << fmt_double(r.mean(agent, protocol, variant)) << " ± "
             << fmt_double(r.stddev(agent, protocol, variant));
        }
      }
      os << " |\n";
    }
    const auto ref = r.scores("max_in_dataset", "data", variant);
    if (!ref.empty()) {
      os << "\nMax return in dataset: " << fmt_double(mean_of(ref)) << "\n";
    }
    os << "\n";
  }
  if (!r.failures.empty()) {
    os << "## Failures\n\n";
    for (const std::string& f : r.failures) os << "- " << f << "\n";
  }
}

void write_svg(const ExperimentResult& r, const std::vector<double>& xs,
               const std::string& path) {
  const int width = 640, height = 420;
  const int ml = 60, mr = 20, mt = 30, mb = 50;
  struct Series {
    std::string label;
    std::string agent;
    std::string protocol;
    std::string color;
  };
  const std::vector<Series> series = {{"CQL", "cql", "best", "#1f77b4"},
                                      {"DT", "dt", "best", "#d62728"},
                                      {"QDT", "qdt", "best", "#2ca02c"},
                                      {"max in dataset", "max_in_dataset",
                                       "data", "#7f7f7f"}};
  double ymin = std::numeric_limits<double>::infinity();
  double ymax = -ymin;
  for (const Series& s : series) {
    for (double x : xs) {
      std::ostringstream v;
      v << "X=" << x;
      const auto vals = r.scores(s.agent, s.protocol, v.str());
      if (vals.empty()) continue;
      const double m = mean_of(vals);
      ymin = std::min(ymin, m);
      ymax = std::max(ymax, m);
    }
  }
  if (!(ymin < ymax)) {
    ymin = -1;
    ymax = 1;
  }
  const double xlo = xs.front(), xhi = xs.back();
  auto sx = [&](double x) {
    return ml + (x - xlo) / std::max(1e-12, xhi - xlo) * (width - ml - mr);
  };
  auto sy = [&](double y) {
    return height - mb - (y - ymin) / (ymax - ymin) * (height - mt - mb);
  };

  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
     << "\" height=\"" << height << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << ml << "\" y1=\"" << height - mb << "\" x2=\""
     << width - mr << "\" y2=\"" << height - mb << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml
     << "\" y2=\"" << height - mb << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << (width / 2) << "\" y=\"" << height - 12
     << "\" text-anchor=\"middle\">removed top X% of trajectories</text>\n";
  os << "<text x=\"16\" y=\"" << (height / 2)
     << "\" transform=\"rotate(-90 16 " << (height / 2)
     << ")\" text-anchor=\"middle\">score</text>\n";
  int legend_y = mt;
  for (const Series& s : series) {
    std::ostringstream pts;
    bool any = false;
    for (double x : xs) {
      std::ostringstream v;
      v << "X=" << x;
      const auto vals = r.scores(s.agent, s.protocol, v.str());
      if (vals.empty()) continue;
      any = true;
      pts << sx(x) << "," << sy(mean_of(vals)) << " ";
    }
    if (!any) continue;
    os << "<polyline fill=\"none\" stroke=\"" << s.color
       << "\" stroke-width=\"2\" points=\"" << pts.str() << "\"/>\n";
    os << "<text x=\"" << width - mr - 150 << "\" y=\"" << legend_y
       << "\" fill=\"" << s.color << "\">" << s.label << "</text>\n";
    legend_y += 18;
  }
  os << "</svg>\n";
}

}  // namespace

std::vector<std::string> emit(const ExperimentResult& result,
                              const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::string> written;
  const std::string hash = std::to_string(result.config_hash());

  const std::string csv_path = out_dir + "/" + result.id + ".csv";
  {
    std::ofstream os(csv_path);
    if (!os) throw IoError("cannot write " + csv_path);
    os << "experiment_id,agent,seed,protocol,score,config_hash\n";
    for (const ScoreRow& r : result.rows) {
      std::string experiment_id = result.id;
      if (!r.variant.empty()) experiment_id += ":" + r.variant;
      os << experiment_id << "," << r.agent << "," << r.seed << ","
         << r.protocol << "," << fmt_double(r.score) << "," << hash << "\n";
    }
  }
  written.push_back(csv_path);

  const std::string md_path = out_dir + "/" + result.id + ".md";
  write_markdown(result, md_path);
  written.push_back(md_path);

  const std::string json_path = out_dir + "/" + result.id + ".json";
  {
    std::ofstream os(json_path);
    if (!os) throw IoError("cannot write " + json_path);
    os << result.to_json().dump(2) << "\n";
  }
  written.push_back(json_path);

  // Sweep chart when variants look like X=<number>.
  std::vector<double> xs;
  for (const std::string& v : distinct_variants(result)) {
    if (v.rfind("X=", 0) == 0) xs.push_back(std::stod(v.substr(2)));
  }
  if (xs.size() >= 2) {
    std::sort(xs.begin(), xs.end());
    const std::string svg_path = out_dir + "/" + result.id + ".svg";
    write_svg(result, xs, svg_path);
    written.push_back(svg_path);
  }
  return written;
}

std::vector<ScoreRow> load_scores_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(is, line)) throw SchemaError("empty csv: " + path);
  if (line != "experiment_id,agent,seed,protocol,score,config_hash") {
    throw SchemaError("unexpected csv header in " + path);
  }
  std::vector<ScoreRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 6) throw SchemaError("bad csv row: " + line);
    ScoreRow r;
    const std::string& eid = fields[0];
    const std::size_t colon = eid.find(':');
    r.variant = colon == std::string::npos ? "" : eid.substr(colon + 1);
    r.agent = fields[1];
    r.seed = std::stoi(fields[2]);
    r.protocol = fields[3];
    r.score = std::stod(fields[4]);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace qdt
