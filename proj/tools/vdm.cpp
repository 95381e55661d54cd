// Command-line entry point: simulate, dataset, train, infer, eval, pattern,
// stereo. Exit status 0 on success, 1 on usage errors, 2 on runtime errors.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "vdm/baselines.hpp"
#include "vdm/config.hpp"
#include "vdm/dataset.hpp"
#include "vdm/metrics.hpp"
#include "vdm/ndf.hpp"
#include "vdm/speech.hpp"
#include "vdm/stereo.hpp"
#include "vdm/wav.hpp"

namespace fs = std::filesystem;
using namespace vdm;

namespace {

constexpr const char* kVersion = "1.0.0";

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Options every subcommand shares.
struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool out_required = true) {
  cmd->add_option("--config", c.config_path, "key=value configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "configuration override key=value (repeatable)");
  cmd->add_option("--seed", c.seed, "random seed (falls back to $VDM_SEED, then 0)");
  auto* o = cmd->add_option("--out", c.out, "output directory");
  if (out_required) o->required();
}

std::uint64_t resolve_seed(const Common& c) {
  if (c.seed) return *c.seed;
  if (const char* env = std::getenv("VDM_SEED"); env && *env) {
    try {
      return ConfigSchema::parse_uint<std::uint64_t>("VDM_SEED", env);
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
  }
  return 0;
}

/// File entries first, then --set overrides (later wins), then entries
/// implied by dedicated flags.
KeyValues gather_config(const Common& c, const KeyValues& from_flags = {}) {
  KeyValues kv;
  if (!c.config_path.empty()) {
    std::ifstream in(c.config_path);
    if (!in) throw std::runtime_error("cannot open config " + c.config_path);
    kv = parse_key_values(in, c.config_path);
  }
  for (const auto& [k, v] : parse_overrides(c.overrides)) kv[k] = v;
  for (const auto& [k, v] : from_flags) kv[k] = v;
  return kv;
}

void apply_config(ConfigSchema& schema, const KeyValues& kv) {
  try {
    schema.apply(kv);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
}

std::string command_line(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) s += (i ? " " : "") + std::string(argv[i]);
  return s;
}

/// Effective configuration, seed, arguments and version next to the outputs.
void write_run_record(const fs::path& dir, const std::string& subcommand, std::uint64_t seed, const KeyValues& effective,
                      const KeyValues& args, const std::string& cmdline) {
  fs::create_directories(dir);
  std::ofstream os(dir / ("run_" + subcommand + ".txt"));
  os << "# vdm run record\n";
  KeyValues head{{"version", kVersion}, {"subcommand", subcommand}, {"seed", std::to_string(seed)}, {"command", cmdline}};
  write_key_values(os, head);
  KeyValues a;
  for (const auto& [k, v] : args) a["arg." + k] = v;
  write_key_values(os, a);
  KeyValues cfg;
  for (const auto& [k, v] : effective) cfg["config." + k] = v;
  write_key_values(os, cfg);
  if (!os) throw std::runtime_error("cannot write run record in " + dir.string());
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p);
  os << text;
  if (!os) throw std::runtime_error("cannot write " + p.string());
}

std::string fmt(double v) { return ConfigSchema::format_double(v); }

// ---------------------------------------------------------------------------
// simulate

struct SimulateParams {
  SceneRanges ranges;
  RoomSpec room{8.0, 6.0, 4.0, 0.4};
  Vec3 center{4.0, 3.0, 1.5};
  double azimuth_deg = 0.0;  // relative to the look direction
  double distance = 1.5;

  ConfigSchema schema() {
    ConfigSchema s = ranges.schema();
    s.bind("room_length", room.length).bind("room_width", room.width).bind("room_height", room.height);
    s.bind("rt60", room.rt60);
    s.bind("center_x", center.x).bind("center_y", center.y).bind("center_z", center.z);
    s.bind("source_azimuth", azimuth_deg).bind("source_distance", distance);
    return s;
  }
};

int run_simulate(const Common& c, const std::string& speech_path, const std::string& cmdline) {
  SimulateParams prm;
  auto schema = prm.schema();
  apply_config(schema, gather_config(c));
  const auto seed = resolve_seed(c);

  SceneSpec scene;
  scene.split = Split::test;
  scene.seed = seed;
  scene.room = prm.room;
  scene.array_center = prm.center;
  SourcePlacement src;
  src.azimuth_deg = prm.azimuth_deg;
  src.distance = prm.distance;
  const double global = deg2rad(prm.ranges.look_azimuth + prm.azimuth_deg);
  src.position = prm.center + Vec3{std::cos(global), std::sin(global), 0.0} * prm.distance;
  if (!prm.room.contains(prm.center) || !prm.room.contains(src.position))
    throw std::invalid_argument("simulate: array or source outside the room");
  scene.sources.push_back(src);

  std::optional<SpeechCatalog> catalog;
  if (!speech_path.empty()) {
    const auto w = read_wav(speech_path);
    if (w.num_channels() != 1 || w.sample_rate != prm.ranges.sample_rate)
      throw std::invalid_argument("simulate: speech must be mono at the configured sample rate");
    catalog = SpeechCatalog{{{speech_path, w.length(), rms_dbfs(w.channels.front())}}, {}};
  }
  const auto out = build_sample(scene, prm.ranges, catalog ? &*catalog : nullptr, "simulate");
  const fs::path dir(c.out);
  fs::create_directories(dir);
  write_wav((dir / "sample.wav").string(), sample_waveform(out.bundle));

  RirOptions opt;
  opt.fs = prm.ranges.sample_rate;
  const auto rirs = source_rirs(prm.room, prm.center, ArrayGeometry::compact_uca(), src.position, prm.ranges.pattern(), opt);
  Waveform rw;
  rw.sample_rate = opt.fs;
  for (const auto& r : rirs.mics) rw.channels.push_back(r.taps);
  rw.channels.push_back(rirs.vdm.taps);
  write_wav((dir / "rirs.wav").string(), rw);
  write_text(dir / "scene.json", out.record.dump(2) + "\n");
  write_run_record(dir, "simulate", seed, schema.effective(), {{"speech", speech_path}, {"out", c.out}}, cmdline);
  std::cout << "wrote " << (dir / "sample.wav").string() << " (7 channels: y1..y4, z_coh, z_diff, z_vdm)\n";
  return 0;
}

// ---------------------------------------------------------------------------
// dataset

int run_dataset(const Common& c, const std::string& split, std::size_t n, std::size_t jobs, const std::string& speech_dir,
                const std::string& cmdline) {
  DatasetOptions opt;
  auto schema = opt.ranges.schema();
  apply_config(schema, gather_config(c));
  try {
    opt.split = parse_split(split);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  opt.n = n;
  opt.seed = resolve_seed(c);
  opt.out_dir = c.out;
  opt.jobs = jobs ? jobs : std::max(1u, std::thread::hardware_concurrency());
  std::optional<SpeechCatalog> catalog;
  if (!speech_dir.empty()) {
    catalog = ingest_speech(speech_dir, opt.ranges.min_loudness_dbfs, opt.ranges.sample_rate);
    for (const auto& [path, why] : catalog->rejected) std::cerr << "skipped " << path << ": " << why << '\n';
    opt.catalog = &*catalog;
  }
  write_run_record(c.out, "dataset", opt.seed, schema.effective(),
                   {{"split", split}, {"n", std::to_string(n)}, {"speech_dir", speech_dir}, {"out", c.out}}, cmdline);
  const auto res = gen_dataset(opt);
  if (!res.complete) throw std::runtime_error("dataset generation stopped: " + res.error);
  std::cout << "wrote " << res.records.size() << " samples to " << c.out << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// train / infer / eval

struct TrainParams {
  std::size_t epochs = 1;
  std::size_t batch_size = 10;
  std::size_t max_steps = 0;
  std::size_t limit = 0;  // samples loaded; 0 loads all
  double lr = 1e-3;
  double clip_norm = 0.0;  // 0 disables
  std::size_t hidden_freq = 32;
  std::size_t hidden_time = 32;
  int lambda_vdm = 1;
  std::string loss_domain = "time";

  ConfigSchema schema() {
    ConfigSchema s;
    s.bind("epochs", epochs).bind("batch_size", batch_size).bind("max_steps", max_steps).bind("limit", limit);
    s.bind("lr", lr).bind("clip_norm", clip_norm);
    s.bind("hidden_freq", hidden_freq).bind("hidden_time", hidden_time);
    s.bind("lambda_vdm", lambda_vdm).bind("loss_domain", loss_domain);
    return s;
  }
};

std::vector<TrainItem> load_items(const std::string& dir, std::size_t limit, const StftConfig& stft_cfg) {
  const auto records = read_manifest((fs::path(dir) / "manifest.jsonl").string());
  std::vector<TrainItem> items;
  for (const auto& rec : records) {
    if (limit && items.size() >= limit) break;
    auto s = load_sample(dir, rec);
    items.push_back(make_item(s.mics, std::move(s.z_coh), std::move(s.z_diff), std::move(s.z_vdm),
                              rec.at("beta").get<double>(), stft_cfg, rec.at("id").get<std::string>()));
  }
  if (items.empty()) throw std::runtime_error("no samples in " + dir);
  return items;
}

LossTerms mean_loss(const NetworkParams& p, std::span<const TrainItem> items, const LossOptions& opt) {
  LossTerms acc;
  for (const auto& it : items) {
    const TrainItem* one = &it;
    const auto r = evaluate_batch(p, std::span<const TrainItem* const>(&one, 1), opt);
    acc.coh += r.loss.coh, acc.diff += r.loss.diff, acc.vdm += r.loss.vdm, acc.total += r.loss.total;
  }
  const double n = static_cast<double>(items.size());
  return {acc.coh / n, acc.diff / n, acc.vdm / n, acc.total / n};
}

int run_train(const Common& c, const std::string& data, const std::string& valid, const std::string& init,
              const KeyValues& flag_cfg, const std::string& cmdline) {
  TrainParams prm;
  auto schema = prm.schema();
  apply_config(schema, gather_config(c, flag_cfg));
  if (prm.lambda_vdm != 0 && prm.lambda_vdm != 1) throw UsageError("lambda_vdm must be 0 or 1");
  if (prm.loss_domain != "time" && prm.loss_domain != "spectral") throw UsageError("loss_domain must be time or spectral");
  const auto seed = resolve_seed(c);
  const StftConfig stft_cfg;
  const auto items = load_items(data, prm.limit, stft_cfg);
  const std::size_t mics = items.front().features.values.cols() / 2;

  NetworkParams p = init.empty() ? init_params({mics, stft_cfg.bins(), prm.hidden_freq, prm.hidden_time, seed})
                                 : load_checkpoint(init);
  TrainConfig tc;
  tc.adam.lr = prm.lr;
  if (prm.clip_norm > 0.0) tc.adam.clip_norm = prm.clip_norm;
  tc.loss.lambda_vdm = prm.lambda_vdm;
  tc.loss.domain = prm.loss_domain == "time" ? LossDomain::time : LossDomain::spectral;
  tc.batch_size = prm.batch_size;
  tc.epochs = prm.epochs;
  tc.max_steps = prm.max_steps;
  tc.seed = seed;

  const fs::path dir(c.out);
  fs::create_directories(dir);
  write_run_record(dir, "train", seed, schema.effective(), {{"data", data}, {"valid", valid}, {"init", init}, {"out", c.out}},
                   cmdline);
  std::ofstream trace(dir / "trace.csv");
  const auto rows = train(p, items, tc, &trace, [](const TraceRow& r) {
    if (r.step % 10 == 0) std::cerr << "step " << r.step << " L_final " << r.loss.total << '\n';
  });
  save_checkpoint(p, (dir / "model.ndfp").string());
  if (!rows.empty()) std::cout << "final batch L_final " << rows.back().loss.total << '\n';
  if (!valid.empty()) {
    const auto vitems = load_items(valid, prm.limit, stft_cfg);
    const auto l = mean_loss(p, vitems, tc.loss);
    std::cout << "valid L_coh " << l.coh << " L_diff " << l.diff << " L_vdm " << l.vdm << " L_final " << l.total << '\n';
  }
  std::cout << "wrote " << (dir / "model.ndfp").string() << '\n';
  return 0;
}

int run_infer(const Common& c, const std::string& checkpoint, const std::string& input, double beta,
              const std::string& cmdline) {
  const auto p = load_checkpoint(checkpoint);
  auto w = read_wav(input);
  const std::size_t q = p.config().mics;
  if (w.num_channels() < q) throw std::invalid_argument("infer: input has fewer channels than the network expects");
  w.channels.resize(q);
  const auto r = infer(p, w, beta, StftConfig());
  const std::size_t n = w.length();
  auto cut = [n](Signal s) {
    s.resize(n);
    return s;
  };
  const fs::path dir(c.out);
  fs::create_directories(dir);
  write_wav((dir / "vdm.wav").string(), Waveform(w.sample_rate, {cut(r.vdm), cut(r.coh), cut(r.diff)}));
  write_run_record(dir, "infer", resolve_seed(c), {},
                   {{"checkpoint", checkpoint}, {"input", input}, {"beta", fmt(beta)}, {"out", c.out}}, cmdline);
  std::cout << "wrote " << (dir / "vdm.wav").string() << " (channels: vdm, coh, diff)\n";
  return 0;
}

int run_eval(const Common& c, const std::string& data, const std::string& mode, const std::string& checkpoint,
             std::size_t limit, const std::string& cmdline) {
  const auto records = read_manifest((fs::path(data) / "manifest.jsonl").string());
  std::optional<NetworkParams> params;
  if (mode == "model") {
    if (checkpoint.empty()) throw UsageError("eval --mode model needs --checkpoint");
    params = load_checkpoint(checkpoint);
  } else if (mode != "oracle" && mode != "dma") {
    throw UsageError("eval: unknown mode " + mode);
  }
  const StftConfig cfg;
  const auto geometry = ArrayGeometry::compact_uca();
  MetricReport report;
  std::vector<ScatterSample> scatter;
  for (const auto& rec : records) {
    if (limit && scatter.size() >= limit) break;
    const auto s = load_sample(data, rec);
    const std::string id = rec.at("id");
    const double beta = rec.at("beta"), rt60 = rec.at("rt60");
    const std::size_t n = s.mics.length();
    const auto xi = cvdr(stft(s.z_coh, cfg), stft(s.z_diff, cfg));
    Signal est_vdm, est_coh, est_diff;
    if (mode == "dma") {
      const auto bw = default_dma(geometry, deg2rad(rec.at("look_azimuth_deg").get<double>()), cfg, s.mics.sample_rate);
      est_vdm = beamform(bw, s.mics, cfg);
    } else {
      MaskPair masks;
      const auto y = stft(s.mics.channels.front(), cfg);
      if (mode == "oracle") {
        masks = oracle_masks(y, stft(s.z_coh, cfg), stft(s.z_diff, cfg));
      } else {
        Waveform mics = s.mics;
        mics.channels.resize(params->config().mics);
        masks = infer(*params, mics, beta, cfg).masks;
      }
      const auto e = apply_and_combine(masks, y, beta);
      est_vdm = istft(e.vdm, cfg);
      est_coh = istft(e.coh, cfg);
      est_diff = istft(e.diff, cfg);
      est_coh.resize(n);
      est_diff.resize(n);
    }
    est_vdm.resize(n);
    const double sdr_vdm = sdr(est_vdm, s.z_vdm);
    Signal combined(n);
    for (std::size_t i = 0; i < n; ++i) combined[i] = s.z_coh[i] + beta * s.z_diff[i];
    report.rows.push_back({id, rt60, "sdr_vdm", sdr_vdm, xi.db});
    report.rows.push_back({id, rt60, "sdr_combined", sdr(est_vdm, combined), xi.db});
    if (!est_coh.empty()) {
      report.rows.push_back({id, rt60, "sdr_coh", sdr(est_coh, s.z_coh), xi.db});
      report.rows.push_back({id, rt60, "sdr_diff", sdr(est_diff, s.z_diff), xi.db});
    }
    scatter.push_back({id, rt60, xi, sdr_vdm});
  }
  const fs::path dir(c.out);
  fs::create_directories(dir);
  {
    std::ofstream os(dir / "metrics.csv");
    report.write_csv(os);
    std::ofstream sc(dir / "scatter.csv");
    scatter_report(scatter, sc);
  }
  write_run_record(dir, "eval", resolve_seed(c), {},
                   {{"data", data}, {"mode", mode}, {"checkpoint", checkpoint}, {"limit", std::to_string(limit)}, {"out", c.out}},
                   cmdline);
  for (const char* m : {"sdr_vdm", "sdr_combined", "sdr_coh", "sdr_diff"})
    if (!report.values(m).empty())
      std::cout << m << " mean " << report.mean(m) << " dB, median " << report.median(m) << " dB over "
                << report.values(m).size() << " samples\n";
  return 0;
}

// ---------------------------------------------------------------------------
// pattern

int run_pattern(bool analytic, bool dma, int order, double grid, double look, const std::vector<double>& freqs,
                double seconds, const std::string& csv, std::uint64_t seed, const std::string& cmdline) {
  if (analytic == dma) throw UsageError("pattern: choose exactly one of --analytic or --dma");
  if (!(grid > 0.0)) throw UsageError("pattern: --grid must be positive");
  if (order < 0) throw UsageError("pattern: --order must be >= 0");
  const auto geometry = ArrayGeometry::compact_uca();
  const DirectivityPattern reference{dma ? 1 : order, deg2rad(look)};
  const StftConfig cfg;
  const ArrayProcessor proc = analytic ? analytic_processor(reference)
                                       : beamformer_processor(default_dma(geometry, deg2rad(look), cfg), cfg);
  const auto az = azimuth_grid(grid);
  ProbeOptions opt;
  opt.seconds = seconds;
  opt.seed = seed;
  const auto table = measure_pattern(proc, geometry, az, freqs, opt);
  std::ostringstream os;
  write_pattern_csv(os, table, reference);
  if (csv.empty() || csv == "-") {
    std::cout << os.str();
  } else {
    write_text(csv, os.str());
    std::string f;
    for (double v : freqs) f += (f.empty() ? "" : ",") + fmt(v);
    write_run_record(fs::absolute(csv).parent_path(), "pattern", seed, {},
                     {{"mode", analytic ? "analytic" : "dma"}, {"order", std::to_string(order)}, {"grid", fmt(grid)},
                      {"look", fmt(look)}, {"freqs", f}, {"seconds", fmt(seconds)}, {"csv", csv}},
                     cmdline);
    std::cout << "wrote " << table.azimuths_deg.size() << " rows to " << csv << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------
// stereo

int run_stereo(const Common& c, const std::string& mode_name, const std::string& checkpoint, double beta,
               const std::string& speech_path, const std::string& cmdline) {
  StereoScene sc;
  auto schema = sc.schema();
  apply_config(schema, gather_config(c));
  StereoMode mode;
  try {
    mode = parse_stereo_mode(mode_name);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  std::optional<NetworkParams> params;
  if (mode == StereoMode::model) {
    if (checkpoint.empty()) throw UsageError("stereo --mode model needs --checkpoint");
    params = load_checkpoint(checkpoint);
  }
  const auto seed = resolve_seed(c);
  Signal speech;
  if (speech_path.empty()) {
    speech = synthetic_speech(sc.samples(), seed, sc.fs);
  } else {
    const auto w = read_wav(speech_path);
    if (w.num_channels() != 1 || w.sample_rate != sc.fs) throw std::invalid_argument("stereo: speech must be mono 16 kHz");
    speech = w.channels.front();
    speech.resize(std::max(speech.size(), sc.samples()), 0.0);
  }
  const auto scene = render_moving_scene(sc, speech, mode == StereoMode::model);
  const auto est = stereo_estimates(mode, scene, StftConfig(), params ? &*params : nullptr);
  const auto pair = stereo_render(est, beta);
  const fs::path dir(c.out);
  fs::create_directories(dir);
  write_wav((dir / "stereo.wav").string(), pair.waveform(sc.fs));
  const auto curve = ild_report(pair.left, pair.right, sc.fs);
  std::ostringstream os;
  write_ild_csv(os, curve);
  write_text(dir / "ild.csv", os.str());
  write_run_record(dir, "stereo", seed, schema.effective(),
                   {{"mode", mode_name}, {"checkpoint", checkpoint}, {"beta", fmt(beta)}, {"speech", speech_path}, {"out", c.out}},
                   cmdline);
  std::cout << "wrote " << (dir / "stereo.wav").string() << "; mean |ILD| " << mean_abs(curve)
            << " dB; zero crossing at " << zero_crossing_time(curve) << " s\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Virtual directional microphone toolkit"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  const std::string cmdline = command_line(argc, argv);

  Common sim_c, ds_c, tr_c, inf_c, ev_c, st_c;
  std::string sim_speech;
  auto* sim = app.add_subcommand("simulate", "render one scene: 7-channel sample, RIRs and scene record");
  add_common(sim, sim_c);
  sim->add_option("--speech", sim_speech, "mono 16 kHz source WAV (default: synthetic speech)")->check(CLI::ExistingFile);

  std::string ds_split = "train", ds_speech;
  std::size_t ds_n = 0, ds_jobs = 0;
  auto* ds = app.add_subcommand("dataset", "generate a dataset split with a JSONL manifest");
  add_common(ds, ds_c);
  ds->add_option("--split", ds_split, "train, valid or test")->check(CLI::IsMember({"train", "valid", "test"}));
  ds->add_option("--n", ds_n, "number of samples")->required();
  ds->add_option("--jobs", ds_jobs, "worker threads (default: all cores)");
  ds->add_option("--speech-dir", ds_speech, "directory of mono 16 kHz speech WAVs (default: synthetic speech)");

  std::string tr_data, tr_valid, tr_init;
  std::optional<std::size_t> tr_epochs, tr_steps, tr_batch;
  std::optional<double> tr_lr;
  auto* tr = app.add_subcommand("train", "train the dual-mask network; writes model.ndfp and trace.csv");
  add_common(tr, tr_c);
  tr->add_option("--data", tr_data, "dataset directory")->required();
  tr->add_option("--valid", tr_valid, "validation dataset directory");
  tr->add_option("--init", tr_init, "checkpoint to continue from")->check(CLI::ExistingFile);
  tr->add_option("--epochs", tr_epochs, "shorthand for --set epochs=N");
  tr->add_option("--max-steps", tr_steps, "shorthand for --set max_steps=N");
  tr->add_option("--batch-size", tr_batch, "shorthand for --set batch_size=N");
  tr->add_option("--lr", tr_lr, "shorthand for --set lr=X");

  std::string inf_ckpt, inf_input;
  double inf_beta = beta_from_di(10.0 * std::log10(3.0)).value;
  auto* inf = app.add_subcommand("infer", "apply a checkpoint to a multichannel WAV");
  add_common(inf, inf_c);
  inf->add_option("--checkpoint", inf_ckpt, "model checkpoint")->required()->check(CLI::ExistingFile);
  inf->add_option("--input", inf_input, "multichannel WAV, reference mic first")->required()->check(CLI::ExistingFile);
  inf->add_option("--beta", inf_beta, "diffuse weight")->check(CLI::Range(0.0, 1.0));

  std::string ev_data, ev_mode = "oracle", ev_ckpt;
  std::size_t ev_limit = 0;
  auto* ev = app.add_subcommand("eval", "per-sample SDR and CVDR on a dataset");
  add_common(ev, ev_c);
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--mode", ev_mode, "oracle, model or dma")->check(CLI::IsMember({"oracle", "model", "dma"}));
  ev->add_option("--checkpoint", ev_ckpt, "model checkpoint (model mode)");
  ev->add_option("--limit", ev_limit, "evaluate at most N samples");

  bool pat_analytic = false, pat_dma = false;
  int pat_order = 1;
  double pat_grid = 5.0, pat_look = 30.0, pat_seconds = 2.0;
  std::vector<double> pat_freqs{200.0, 500.0, 1000.0, 2000.0, 4000.0};
  std::string pat_csv;
  std::optional<std::uint64_t> pat_seed;
  auto* pat = app.add_subcommand("pattern", "measure a directivity pattern with plane-wave noise probes");
  pat->add_flag("--analytic", pat_analytic, "J-th order cardioid applied to the reference mic");
  pat->add_flag("--dma", pat_dma, "first-order differential beamformer");
  pat->add_option("--order", pat_order, "cardioid order J");
  pat->add_option("--grid", pat_grid, "azimuth step in degrees");
  pat->add_option("--look", pat_look, "look direction in degrees");
  pat->add_option("--freqs", pat_freqs, "probe frequencies in Hz")->delimiter(',');
  pat->add_option("--seconds", pat_seconds, "probe length");
  pat->add_option("--csv", pat_csv, "output CSV (default: stdout)");
  pat->add_option("--seed", pat_seed, "probe noise seed");

  std::string st_mode = "oracle", st_ckpt, st_speech;
  double st_beta = beta_from_di(10.0 * std::log10(3.0)).value;
  auto* st = app.add_subcommand("stereo", "moving-source X-Y stereo from two virtual microphones");
  add_common(st, st_c);
  st->add_option("--mode", st_mode, "oracle, ideal-vdm or model")->check(CLI::IsMember({"oracle", "ideal-vdm", "model"}));
  st->add_option("--checkpoint", st_ckpt, "model checkpoint (model mode)");
  st->add_option("--beta", st_beta, "diffuse weight")->check(CLI::Range(0.0, 1.0));
  st->add_option("--speech", st_speech, "mono 16 kHz source WAV (default: synthetic speech)")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*sim) return run_simulate(sim_c, sim_speech, cmdline);
    if (*ds) return run_dataset(ds_c, ds_split, ds_n, ds_jobs, ds_speech, cmdline);
    if (*tr) {
      KeyValues flags;
      if (tr_epochs) flags["epochs"] = std::to_string(*tr_epochs);
      if (tr_steps) flags["max_steps"] = std::to_string(*tr_steps);
      if (tr_batch) flags["batch_size"] = std::to_string(*tr_batch);
      if (tr_lr) flags["lr"] = fmt(*tr_lr);
      return run_train(tr_c, tr_data, tr_valid, tr_init, flags, cmdline);
    }
    if (*inf) return run_infer(inf_c, inf_ckpt, inf_input, inf_beta, cmdline);
    if (*ev) return run_eval(ev_c, ev_data, ev_mode, ev_ckpt, ev_limit, cmdline);
    if (*pat) {
      const std::uint64_t seed = pat_seed ? *pat_seed : resolve_seed(Common{});
      return run_pattern(pat_analytic, pat_dma, pat_order, pat_grid, pat_look, pat_freqs, pat_seconds, pat_csv, seed, cmdline);
    }
    if (*st) return run_stereo(st_c, st_mode, st_ckpt, st_beta, st_speech, cmdline);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
