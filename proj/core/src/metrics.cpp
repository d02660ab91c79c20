#include "ptyfed/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ptyfed/errors.hpp"

namespace ptyfed::metrics {
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

template <typename Event, typename Key>
void merge(std::vector<Event>& events, Event e, Key key, const std::string& what, const std::string& where) {
  auto it = std::find_if(events.begin(), events.end(), [&](const Event& other) { return key(other) == key(e); });
  if (it == events.end()) {
    events.push_back(std::move(e));
  } else if (!(*it == e)) {
    throw IoError(where + ": conflicting duplicate " + what + " '" + key(e) + "'");
  }
}

}  // namespace

std::vector<std::string> EventTable::run_ids() const {
  std::set<std::string> ids;
  for (const auto& r : runs) ids.insert(r.run_id);
  for (const auto& s : states) ids.insert(s.run_id);
  return {ids.begin(), ids.end()};
}

void ingest_stream(EventTable& table, std::istream& in, const std::string& source) {
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = source + ":" + std::to_string(number);
    try {
      const auto j = json::parse(line);
      const auto type = j.at("type").get<std::string>();
      if (type == "state") {
        StateEvent e{j.at("run_id").get<std::string>(),   j.value("flow_id", std::string{}),
                     j.at("state").get<std::string>(),    j.at("action_type").get<std::string>(),
                     j.value("attempt", std::size_t{1}),  j.at("attempt_id").get<std::string>(),
                     j.at("started").get<double>(),       j.at("finished").get<double>(),
                     j.at("outcome").get<std::string>()};
        merge(table.states, std::move(e), [](const StateEvent& s) { return s.attempt_id; }, "state attempt", where);
      } else if (type == "run") {
        RunEvent e{j.at("run_id").get<std::string>(), j.value("flow_id", std::string{}),
                   j.at("status").get<std::string>(), j.at("started").get<double>(), j.at("finished").get<double>()};
        merge(table.runs, std::move(e), [](const RunEvent& r) { return r.run_id; }, "run", where);
      } else if (type == "task") {
        TaskEvent e{j.at("task_id").get<std::string>(), j.value("function_id", std::string{}),
                    j.value("tag", std::string{}),      j.at("state").get<std::string>(),
                    j.value("queued_at", 0.0),          j.at("started").get<double>(),
                    j.at("finished").get<double>()};
        merge(table.tasks, std::move(e), [](const TaskEvent& t) { return t.task_id; }, "task", where);
      }
    } catch (const json::exception& e) {
      throw IoError(where + ": malformed journal line: " + e.what());
    }
  }
}

EventTable ingest_events(const std::vector<fs::path>& journals) {
  std::vector<fs::path> files;
  for (const auto& p : journals) {
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& entry : fs::directory_iterator(p)) {
        if (entry.is_regular_file() && entry.path().extension() == ".jsonl") found.push_back(entry.path());
      }
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.push_back(p);
    }
  }
  EventTable table;
  for (const auto& f : files) {
    std::ifstream in(f);
    if (!in) throw IoError("cannot read journal " + f.string());
    ingest_stream(table, in, f.string());
  }
  return table;
}

TimingBreakdown breakdown(const EventTable& table, const std::string& run_id) {
  auto run = std::find_if(table.runs.begin(), table.runs.end(), [&](const RunEvent& r) { return r.run_id == run_id; });
  if (run == table.runs.end()) throw ConfigError("run '" + run_id + "' is incomplete: no closing run record");

  std::vector<StateEvent> states;
  for (const auto& s : table.states) {
    if (s.run_id == run_id) states.push_back(s);
  }
  std::stable_sort(states.begin(), states.end(),
                   [](const StateEvent& a, const StateEvent& b) { return a.started < b.started; });

  auto first_compute = std::find_if(states.begin(), states.end(), [](const StateEvent& s) {
    return s.action_type == "compute";
  });
  if (first_compute == states.end()) throw ConfigError("run '" + run_id + "' is incomplete: missing compute state");
  const bool has_incoming = std::any_of(states.begin(), first_compute, [](const StateEvent& s) {
    return s.action_type == "transfer";
  });
  if (!has_incoming) throw ConfigError("run '" + run_id + "' is incomplete: missing incoming transfer state");
  auto last_compute = std::find_if(states.rbegin(), states.rend(), [](const StateEvent& s) {
    return s.action_type == "compute";
  });
  const bool has_outgoing = std::any_of(states.rbegin(), last_compute, [](const StateEvent& s) {
    return s.action_type == "transfer";
  });
  if (!has_outgoing) throw ConfigError("run '" + run_id + "' is incomplete: missing outgoing transfer state");

  TimingBreakdown b;
  b.id = run_id;
  b.total = run->finished - run->started;
  bool seen_compute = false;
  for (const auto& s : states) {
    if (s.action_type == "compute") {
      seen_compute = true;
      const auto task = std::find_if(table.tasks.begin(), table.tasks.end(),
                                     [&](const TaskEvent& t) { return t.tag == s.attempt_id; });
      if (task == table.tasks.end()) {
        throw ConfigError("run '" + run_id + "' is incomplete: no task record for compute state '" + s.state +
                          "' (attempt " + s.attempt_id + ")");
      }
      b.compute += task->finished - task->started;
    } else if (!seen_compute) {
      b.incoming += s.finished - s.started;
    } else {
      b.outgoing += s.finished - s.started;
    }
  }
  b.others = std::max(0.0, b.total - b.incoming - b.compute - b.outgoing);
  return b;
}

TimingBreakdown batch_breakdown(const EventTable& table, const std::vector<std::string>& run_ids,
                                const std::string& id) {
  if (run_ids.empty()) throw ConfigError("batch breakdown needs at least one run");
  const std::set<std::string> wanted(run_ids.begin(), run_ids.end());
  double run_start = INFINITY, run_end = -INFINITY;
  std::set<std::string> found;
  for (const auto& r : table.runs) {
    if (!wanted.contains(r.run_id)) continue;
    found.insert(r.run_id);
    run_start = std::min(run_start, r.started);
    run_end = std::max(run_end, r.finished);
  }
  for (const auto& r : wanted) {
    if (!found.contains(r)) throw ConfigError("run '" + r + "' is incomplete: no closing run record");
  }
  std::set<std::string> attempts;
  for (const auto& s : table.states) {
    if (wanted.contains(s.run_id) && s.action_type == "compute") attempts.insert(s.attempt_id);
  }
  double task_start = INFINITY, task_end = -INFINITY;
  for (const auto& t : table.tasks) {
    if (!attempts.contains(t.tag)) continue;
    task_start = std::min(task_start, t.started);
    task_end = std::max(task_end, t.finished);
  }
  if (!std::isfinite(task_start)) throw ConfigError("batch '" + id + "' has no task records");

  TimingBreakdown b;
  b.id = id;
  b.total = run_end - run_start;
  b.compute = task_end - task_start;
  b.others = std::max(0.0, b.total - b.compute);
  return b;
}

std::string breakdown_csv(const std::vector<TimingBreakdown>& rows) {
  std::string out = "run_id,incoming_s,compute_s,outgoing_s,others_s,total_s\n";
  for (const auto& r : rows) {
    out += r.id + "," + fixed6(r.incoming) + "," + fixed6(r.compute) + "," + fixed6(r.outgoing) + "," +
           fixed6(r.others) + "," + fixed6(r.total) + "\n";
  }
  return out;
}

ScalingReport scaling_report(std::vector<std::pair<std::size_t, double>> series, std::optional<std::size_t> base_n) {
  if (series.empty()) throw ConfigError("scaling series is empty");
  std::sort(series.begin(), series.end());
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (series[i].first == 0) throw ConfigError("worker count must be >= 1");
    if (!(series[i].second > 0.0)) throw ConfigError("time for n=" + std::to_string(series[i].first) + " must be > 0");
    if (i > 0 && series[i].first == series[i - 1].first) {
      throw ConfigError("duplicate measurement for n=" + std::to_string(series[i].first));
    }
  }
  ScalingReport report;
  report.base_n = base_n.value_or(series.front().first);
  auto base = std::find_if(series.begin(), series.end(), [&](const auto& p) { return p.first == report.base_n; });
  if (base == series.end()) throw ConfigError("no measurement for base configuration n=" + std::to_string(report.base_n));
  for (const auto& [n, t] : series) {
    ScalingPoint p;
    p.n = n;
    p.time = t;
    p.speedup = base->second / t;
    p.efficiency = p.speedup / (static_cast<double>(n) / static_cast<double>(report.base_n));
    report.points.push_back(p);
  }
  return report;
}

std::string scaling_csv(const ScalingReport& report) {
  std::string out = "n,time_s,speedup,efficiency\n";
  for (const auto& p : report.points) {
    out += std::to_string(p.n) + "," + fixed6(p.time) + "," + fixed6(p.speedup) + "," + fixed6(p.efficiency) + "\n";
  }
  return out;
}

std::string scaling_text(const ScalingReport& report) {
  std::ostringstream out;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%6s %12s %9s %11s\n", "n", "time_s", "speedup", "efficiency");
  out << buf;
  for (const auto& p : report.points) {
    std::snprintf(buf, sizeof buf, "%6zu %12.3f %9.3f %11.3f\n", p.n, p.time, p.speedup, p.efficiency);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "base n=%zu, noise band %.0f%%\n", report.base_n, report.noise_band * 100.0);
  out << buf;
  return out.str();
}

std::string scaling_svg(const ScalingReport& report) {
  constexpr double width = 480, height = 360, margin = 48;
  double max_n = 1.0, max_s = 1.0;
  for (const auto& p : report.points) {
    max_n = std::max(max_n, static_cast<double>(p.n) / report.base_n);
    max_s = std::max(max_s, p.speedup);
  }
  const double top = std::max(max_n, max_s) * 1.05;
  auto px = [&](double x) { return margin + (x - 0.0) / max_n * (width - 2 * margin); };
  auto py = [&](double y) { return height - margin - y / top * (height - 2 * margin); };

  std::ostringstream svg;
  char buf[160];
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof buf, "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n", px(0),
                py(0), px(max_n), py(0));
  svg << buf;
  std::snprintf(buf, sizeof buf, "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n", px(0),
                py(0), px(0), py(top));
  svg << buf;
  std::snprintf(buf, sizeof buf,
                "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"gray\" stroke-dasharray=\"4\"/>\n",
                px(0), py(0), px(max_n), py(max_n));
  svg << buf;
  svg << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
  for (const auto& p : report.points) {
    std::snprintf(buf, sizeof buf, "%.1f,%.1f ", px(static_cast<double>(p.n) / report.base_n), py(p.speedup));
    svg << buf;
  }
  svg << "\"/>\n";
  for (const auto& p : report.points) {
    const double x = px(static_cast<double>(p.n) / report.base_n), y = py(p.speedup);
    std::snprintf(buf, sizeof buf, "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"3\" fill=\"steelblue\"/>\n", x, y);
    svg << buf;
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" font-size=\"11\">n=%zu (%.2fx)</text>\n", x + 5,
                  y - 5, p.n, p.speedup);
    svg << buf;
  }
  std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" font-size=\"12\">workers / base</text>\n",
                width / 2 - 40, height - 12);
  svg << buf;
  std::snprintf(buf, sizeof buf, "<text x=\"8\" y=\"%.1f\" font-size=\"12\">speedup</text>\n", margin - 16);
  svg << buf;
  svg << "</svg>\n";
  return svg.str();
}

std::vector<std::pair<std::size_t, double>> read_scaling_series(const fs::path& csv) {
  std::ifstream in(csv);
  if (!in) throw IoError("cannot read scaling series " + csv.string());
  std::vector<std::pair<std::size_t, double>> series;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    if (++number == 1 || line.empty()) continue;
    std::istringstream row(line);
    std::string n_text, t_text;
    std::getline(row, n_text, ',');
    std::getline(row, t_text, ',');
    try {
      series.emplace_back(std::stoul(n_text), std::stod(t_text));
    } catch (const std::exception&) {
      throw IoError(csv.string() + ":" + std::to_string(number) + ": expected n,time_s");
    }
  }
  return series;
}

double weak_efficiency(const WeakPoint& base, const WeakPoint& scaled) {
  if (base.workers == 0 || scaled.workers == 0) throw ConfigError("worker count must be >= 1");
  if (!(base.time > 0.0) || !(scaled.time > 0.0)) throw ConfigError("times must be > 0");
  if (!(base.problem_size > 0.0)) throw ConfigError("problem size must be > 0");
  const double size_ratio = scaled.problem_size / base.problem_size;
  const double worker_ratio = static_cast<double>(scaled.workers) / static_cast<double>(base.workers);
  if (std::abs(size_ratio - worker_ratio) > 1e-9 * worker_ratio) {
    throw ConfigError("weak scaling needs problem size and workers to grow by the same factor");
  }
  return base.time / scaled.time;
}

}  // namespace ptyfed::metrics
