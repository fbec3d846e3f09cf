#include "avh/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <numbers>
#include <random>
#include <set>
#include <thread>

#include <spdlog/spdlog.h>

#include "avh/accel.hpp"
#include "avh/io.hpp"
#include "avh/pose_select.hpp"
#include "avh/renderer.hpp"
#include "avh/uv.hpp"

namespace avh {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kManifestFormat = "avh-project";
// Bumped whenever a stage's output for identical inputs changes.
constexpr int kPipelineRevision = 1;

fs::path resolve(const fs::path& base, const fs::path& p) { return p.is_absolute() ? p : base / p; }

fs::path relative_to(const fs::path& base, const fs::path& p) {
  if (p.empty()) return p;
  const fs::path rel = p.lexically_relative(base);
  return rel.empty() ? p : rel;
}

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

json vec3_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec3_from(const json& j) {
  const auto a = j.get<std::array<double, 3>>();
  return {a[0], a[1], a[2]};
}

json registration_json(const RegistrationParams& r) {
  return {{"lambda_laplacian", r.lambda_laplacian},
          {"step_size", r.step_size},
          {"max_iters", r.max_iters},
          {"convergence_tol", r.convergence_tol},
          {"max_backtracks", r.max_backtracks}};
}

json bake_json(const ProjectManifest& m) {
  return {{"resolution", m.bake.resolution},
          {"max_match_fraction", m.bake.max_match_fraction},
          {"self_hit_factor", m.bake.self_hit_factor},
          {"outlier_limit", m.outlier_limit}};
}

json confidence_json(const ConfidenceConfig& c) {
  return {{"hemisphere_samples", c.hemisphere_samples}, {"distance_clip_fraction", c.distance_clip_fraction}};
}

json inpaint_json(const InpaintOptions& o) {
  return {{"radius", o.radius}, {"clamp_to_known_range", o.clamp_to_known_range}};
}

json decoder_json(const DecoderConfig& d) {
  return {{"fc_size", d.fc_size},
          {"latent_size", d.latent_size},
          {"hidden_size", d.hidden_size},
          {"out_resolution", d.out_resolution},
          {"displacement_max", d.displacement_max}};
}

json train_json(const TrainConfig& t) {
  return {{"lr", t.lr},           {"batch", t.batch},         {"beta1", t.beta1},
          {"beta2", t.beta2},     {"adam_eps", t.adam_eps},   {"lr_decay", t.lr_decay},
          {"epochs", t.epochs},   {"max_steps", t.max_steps}, {"recalibrate_bn", t.recalibrate_bn}};
}

std::string template_hash(const fs::path& manifest) {
  std::string acc = sha256_file(manifest);
  const json j = json::parse(read_text_file(manifest));
  for (const char* key : {"rest_mesh", "skin_weights", "shape_basis", "joint_shape_basis"}) {
    if (j.contains(key)) acc += sha256_file(manifest.parent_path() / j.at(key).get<std::string>());
  }
  return sha256_hex(acc);
}

}  // namespace

// ---------------------------------------------------------------------------------------------
// Manifest

json pose_to_json(const Pose& p) {
  return {{"theta", std::vector<double>(p.theta.begin(), p.theta.end())},
          {"global_translation", vec3_json(p.global_translation)},
          {"global_rotation", vec3_json(p.global_rotation)},
          {"global_scale", p.global_scale}};
}

Pose pose_from_json(const json& j) {
  Pose p;
  const auto theta = j.at("theta").get<std::vector<double>>();
  if (theta.size() != static_cast<std::size_t>(kPoseValues)) {
    throw InvalidInput("pose: theta must have " + std::to_string(kPoseValues) + " values");
  }
  std::copy(theta.begin(), theta.end(), p.theta.begin());
  if (j.contains("global_translation")) p.global_translation = vec3_from(j.at("global_translation"));
  if (j.contains("global_rotation")) p.global_rotation = vec3_from(j.at("global_rotation"));
  read_opt(j, "global_scale", p.global_scale);
  try {
    p.validate();
  } catch (const std::exception& e) {
    throw InvalidInput(e.what());
  }
  return p;
}

void ProjectManifest::validate() const {
  if (!fs::exists(template_path)) throw InvalidInput("manifest: template not found: " + template_path.string());
  std::set<std::string> ids;
  for (const auto& f : frames) {
    if (f.id.empty()) throw InvalidInput("manifest: frame without id");
    if (!ids.insert(f.id).second) throw InvalidInput("manifest: duplicate frame id " + f.id);
  }
  try {
    registration.validate();
    confidence.validate();
    decoder.validate();
    train.validate();
  } catch (const std::exception& e) {
    throw InvalidInput(std::string("manifest: ") + e.what());
  }
  if (bake.resolution < 1) throw InvalidInput("manifest: bake resolution must be positive");
  if (select.frames < 1 || select.validation < 0) throw InvalidInput("manifest: invalid select block");
}

ProjectManifest load_manifest(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const std::exception& e) {
    throw InvalidInput("cannot read manifest " + path.string() + ": " + e.what());
  }
  ProjectManifest m;
  try {
    if (j.value("format", "") != kManifestFormat) throw InvalidInput(path.string() + ": not an avh project manifest");
    if (j.value("version", 0) != 1) throw InvalidInput(path.string() + ": unsupported manifest version");
    const fs::path base = fs::absolute(path).parent_path();
    m.path = fs::absolute(path);
    m.template_path = resolve(base, j.at("template").get<std::string>());
    m.shape.beta = j.value("shape", std::vector<double>{});
    m.output_dir = resolve(base, j.value("output_dir", std::string("out")));
    m.seed = j.value("seed", std::uint64_t{0});
    for (const auto& f : j.at("frames")) {
      FrameRecord r;
      r.id = f.at("id").get<std::string>();
      r.pose = pose_from_json(f);
      r.scan = resolve(base, f.at("scan").get<std::string>());
      m.frames.push_back(std::move(r));
    }
    if (j.contains("registration")) {
      const auto& b = j["registration"];
      read_opt(b, "lambda_laplacian", m.registration.lambda_laplacian);
      read_opt(b, "step_size", m.registration.step_size);
      read_opt(b, "max_iters", m.registration.max_iters);
      read_opt(b, "convergence_tol", m.registration.convergence_tol);
      read_opt(b, "max_backtracks", m.registration.max_backtracks);
    }
    if (j.contains("bake")) {
      const auto& b = j["bake"];
      read_opt(b, "resolution", m.bake.resolution);
      read_opt(b, "max_match_fraction", m.bake.max_match_fraction);
      read_opt(b, "self_hit_factor", m.bake.self_hit_factor);
      read_opt(b, "outlier_limit", m.outlier_limit);
    }
    if (j.contains("confidence")) {
      read_opt(j["confidence"], "hemisphere_samples", m.confidence.hemisphere_samples);
      read_opt(j["confidence"], "distance_clip_fraction", m.confidence.distance_clip_fraction);
    }
    if (j.contains("inpaint")) {
      read_opt(j["inpaint"], "radius", m.inpaint.radius);
      read_opt(j["inpaint"], "clamp_to_known_range", m.inpaint.clamp_to_known_range);
    }
    if (j.contains("select")) {
      const auto& b = j["select"];
      read_opt(b, "frames", m.select.frames);
      read_opt(b, "validation", m.select.validation);
      read_opt(b, "max_iters", m.select.max_iters);
      read_opt(b, "rel_tol", m.select.rel_tol);
    }
    if (j.contains("decoder")) {
      const auto& b = j["decoder"];
      read_opt(b, "fc_size", m.decoder.fc_size);
      read_opt(b, "latent_size", m.decoder.latent_size);
      read_opt(b, "hidden_size", m.decoder.hidden_size);
      read_opt(b, "out_resolution", m.decoder.out_resolution);
      read_opt(b, "displacement_max", m.decoder.displacement_max);
    }
    if (j.contains("train")) {
      const auto& b = j["train"];
      read_opt(b, "lr", m.train.lr);
      read_opt(b, "batch", m.train.batch);
      read_opt(b, "beta1", m.train.beta1);
      read_opt(b, "beta2", m.train.beta2);
      read_opt(b, "adam_eps", m.train.adam_eps);
      read_opt(b, "lr_decay", m.train.lr_decay);
      read_opt(b, "epochs", m.train.epochs);
      read_opt(b, "max_steps", m.train.max_steps);
      read_opt(b, "recalibrate_bn", m.train.recalibrate_bn);
    }
    if (j.contains("synth")) {
      const auto& b = j["synth"];
      read_opt(b, "subdivision_levels", m.synth.subdivision_levels);
      read_opt(b, "preview_size", m.synth.preview_size);
      if (b.contains("finger_mask") && !b["finger_mask"].is_null()) {
        m.synth.finger_mask = resolve(base, b["finger_mask"].get<std::string>());
      }
    }
  } catch (const InvalidInput&) {
    throw;
  } catch (const std::exception& e) {
    throw InvalidInput("manifest " + path.string() + ": " + e.what());
  }
  m.train.seed = m.seed;
  m.validate();
  return m;
}

json manifest_to_json(const ProjectManifest& m) {
  const fs::path base = m.path.parent_path();
  json frames = json::array();
  for (const auto& f : m.frames) {
    json r = pose_to_json(f.pose);
    r["id"] = f.id;
    r["scan"] = relative_to(base, f.scan).generic_string();
    frames.push_back(r);
  }
  json synth = {{"subdivision_levels", m.synth.subdivision_levels}, {"preview_size", m.synth.preview_size}};
  synth["finger_mask"] = m.synth.finger_mask.empty() ? json(nullptr) : json(relative_to(base, m.synth.finger_mask).generic_string());
  return {{"format", kManifestFormat},
          {"version", 1},
          {"template", relative_to(base, m.template_path).generic_string()},
          {"shape", m.shape.beta},
          {"output_dir", relative_to(base, m.output_dir).generic_string()},
          {"seed", m.seed},
          {"frames", frames},
          {"registration", registration_json(m.registration)},
          {"bake", bake_json(m)},
          {"confidence", confidence_json(m.confidence)},
          {"inpaint", inpaint_json(m.inpaint)},
          {"select",
           {{"frames", m.select.frames},
            {"validation", m.select.validation},
            {"max_iters", m.select.max_iters},
            {"rel_tol", m.select.rel_tol}}},
          {"decoder", decoder_json(m.decoder)},
          {"train", train_json(m.train)},
          {"synth", synth}};
}

void save_manifest(const ProjectManifest& m) { write_text_file(m.path, manifest_to_json(m).dump(2) + "\n"); }

std::vector<std::size_t> parse_frame_range(const std::string& spec, std::size_t count) {
  std::vector<std::size_t> out;
  if (spec.empty()) {
    for (std::size_t i = 0; i < count; ++i) out.push_back(i);
    return out;
  }
  std::size_t a = 0, b = 0;
  try {
    const auto dots = spec.find("..");
    std::size_t used = 0;
    if (dots == std::string::npos) {
      a = b = std::stoul(spec, &used);
      if (used != spec.size()) throw InvalidInput("");
    } else {
      a = std::stoul(spec.substr(0, dots), &used);
      if (used != dots) throw InvalidInput("");
      const std::string tail = spec.substr(dots + 2);
      b = std::stoul(tail, &used);
      if (used != tail.size()) throw InvalidInput("");
    }
  } catch (const std::exception&) {
    throw InvalidInput("--frames: expected 'a..b' or 'a', got '" + spec + "'");
  }
  if (a > b || b >= count) throw InvalidInput("--frames: range " + spec + " outside 0.." + std::to_string(count - 1));
  for (std::size_t i = a; i <= b; ++i) out.push_back(i);
  return out;
}

// ---------------------------------------------------------------------------------------------
// Bake

std::string frame_config_hash(const ProjectManifest& m, const FrameRecord& frame) {
  json j = {{"revision", kPipelineRevision},
            {"template", template_hash(m.template_path)},
            {"shape", m.shape.beta},
            {"pose", pose_to_json(frame.pose)},
            {"scan", fs::exists(frame.scan) ? sha256_file(frame.scan) : std::string("missing")},
            {"registration", registration_json(m.registration)},
            {"bake", bake_json(m)},
            {"confidence", confidence_json(m.confidence)},
            {"inpaint", inpaint_json(m.inpaint)}};
  // Scan textures are part of the input.
  const fs::path mtl = fs::path(frame.scan).replace_extension(".mtl");
  if (fs::exists(mtl)) j["scan_mtl"] = sha256_file(mtl);
  const fs::path png = fs::path(frame.scan).replace_extension(".png");
  if (fs::exists(png)) j["scan_png"] = sha256_file(png);
  return sha256_hex(j.dump());
}

std::size_t BakeReport::failed() const {
  return static_cast<std::size_t>(
      std::count_if(frames.begin(), frames.end(), [](const FrameResult& r) { return r.status == "failed"; }));
}

FrameResult bake_one(const ProjectManifest& m, const SkinnedTemplate& tmpl, const FrameRecord& frame) {
  FrameResult r;
  r.id = frame.id;
  try {
    if (!fs::exists(frame.scan)) throw InvalidInput("scan not found: " + frame.scan.string());
    r.config_hash = frame_config_hash(m, frame);
    const fs::path dir = m.bake_dir();
    const fs::path sidecar = dir / (frame.id + ".json");
    if (fs::exists(sidecar)) {
      try {
        const json s = json::parse(read_text_file(sidecar));
        if (s.value("config_hash", "") == r.config_hash && fs::exists(dir / (frame.id + "_kappa.pfm"))) {
          r.status = "cached";
          r.mean_confidence = s.at("mean_confidence").get<double>();
          r.keep = s.at("keep").get<bool>();
          return r;
        }
      } catch (const std::exception&) {
        // unreadable sidecar: rebake
      }
    }

    const TriMesh scan = read_obj(frame.scan);
    const TriMesh shadow = pose_mesh(tmpl, m.shape, frame.pose);
    const SurfaceAccel scan_accel(scan, m.bake.self_hit_factor);
    const RegistrationResult reg = register_to_scan(shadow, scan_accel, m.registration);
    spdlog::debug("bake {}: registration {} iterations, energy {:.6g} -> {:.6g}", frame.id, reg.iterations,
                  reg.energy.front(), reg.energy.back());
    BakeBundle b = bake_frame(reg.mesh, shadow, scan_accel, m.bake);
    spdlog::debug("bake {}: {} of {} chart texels matched", frame.id, b.matched_count(), b.chart_count());
    const SurfaceAccel reg_accel(reg.mesh, m.bake.self_hit_factor);
    score_confidence(b, reg_accel, scan_accel, m.confidence);
    spdlog::debug("bake {}: confidence scored", frame.id);
    b = filter_outliers(std::move(b), m.outlier_limit);
    const FrameQuality q = frame_quality(b.confidence, b.chart_mask);
    b = fill_bundle(std::move(b), m.inpaint);

    r.mean_confidence = q.mean_confidence;
    r.keep = q.keep;
    const json side = {{"id", frame.id},
                       {"config_hash", r.config_hash},
                       {"mean_confidence", q.mean_confidence},
                       {"keep", q.keep},
                       {"registration_iterations", reg.iterations},
                       {"registration_converged", reg.converged},
                       {"registration_energy", reg.energy.empty() ? 0.0 : reg.energy.back()},
                       {"pose", pose_to_json(frame.pose)}};
    save_bundle(b, dir, frame.id, side);
    r.status = "baked";
    spdlog::info("bake {}: mean kappa {:.4f} ({})", frame.id, q.mean_confidence, q.keep ? "kept" : "discarded");
  } catch (const std::exception& e) {
    r.status = "failed";
    r.error = e.what();
    spdlog::error("bake {}: {}", frame.id, e.what());
  }
  return r;
}

BakeReport cmd_bake(const ProjectManifest& m, const std::vector<std::size_t>& frames, int jobs) {
  const SkinnedTemplate tmpl = load_template(m.template_path);
  if (tmpl.shape_count() != static_cast<int>(m.shape.beta.size())) {
    throw InvalidInput("manifest: shape has " + std::to_string(m.shape.beta.size()) + " values, template has " +
                       std::to_string(tmpl.shape_count()));
  }
  BakeReport report;
  report.frames.resize(frames.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t k = next++; k < frames.size(); k = next++) {
      report.frames[k] = bake_one(m, tmpl, m.frames[frames[k]]);
    }
  };
  const int n = std::max(1, std::min<int>(jobs, static_cast<int>(frames.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  // Quality report over every frame with a bundle on disk, in manifest order.
  json quality = json::array();
  for (const auto& f : m.frames) {
    const fs::path sidecar = m.bake_dir() / (f.id + ".json");
    json e = {{"id", f.id}};
    const auto it = std::find_if(report.frames.begin(), report.frames.end(),
                                 [&](const FrameResult& r) { return r.id == f.id; });
    if (it != report.frames.end() && it->status == "failed") {
      e["status"] = "failed";
      e["error"] = it->error;
    } else if (fs::exists(sidecar)) {
      const json s = json::parse(read_text_file(sidecar));
      e["status"] = s.value("keep", false) ? "kept" : "discarded";
      e["mean_confidence"] = s.value("mean_confidence", 0.0);
    } else {
      e["status"] = "not baked";
    }
    quality.push_back(e);
  }
  write_text_file(m.bake_dir() / "quality.json",
                  json{{"threshold", kFrameQualityThreshold}, {"frames", quality}}.dump(2) + "\n");
  return report;
}

// ---------------------------------------------------------------------------------------------
// Select

SelectReport cmd_select(const ProjectManifest& m, int f) {
  if (f < 1) f = m.select.frames;
  std::vector<int> usable;
  std::vector<Theta> poses;
  for (std::size_t i = 0; i < m.frames.size(); ++i) {
    const fs::path sidecar = m.bake_dir() / (m.frames[i].id + ".json");
    if (!fs::exists(sidecar)) continue;
    const json s = json::parse(read_text_file(sidecar));
    if (!s.value("keep", false)) continue;
    usable.push_back(static_cast<int>(i));
    poses.push_back(m.frames[i].pose.theta);
  }
  if (usable.empty()) throw InvalidInput("select: no baked frames passed the quality gate");
  if (f > static_cast<int>(usable.size())) {
    throw InvalidInput("select: f = " + std::to_string(f) + " exceeds the " + std::to_string(usable.size()) +
                       " usable frames");
  }
  const int validation = std::min(m.select.validation, static_cast<int>(usable.size()) - f);
  KMeansOptions opt{m.seed, m.select.max_iters, m.select.rel_tol};
  const FrameSelection sel = select_frames(poses, f, validation, opt);
  SelectReport r;
  for (int i : sel.training) r.training.push_back(m.frames[usable[i]].id);
  for (int i : sel.validation) r.validation.push_back(m.frames[usable[i]].id);
  r.degenerate_clusters = sel.degenerate_clusters.size();
  const json out = {{"f", f},
                    {"seed", m.seed},
                    {"usable_frames", usable.size()},
                    {"training", r.training},
                    {"validation", r.validation},
                    {"degenerate_clusters", sel.degenerate_clusters},
                    {"kmeans_iterations", sel.clusters.iterations}};
  write_text_file(m.select_file(), out.dump(2) + "\n");
  spdlog::info("select: {} training, {} validation frames", r.training.size(), r.validation.size());
  return r;
}

// ---------------------------------------------------------------------------------------------
// Train

namespace {

const FrameRecord& frame_by_id(const ProjectManifest& m, const std::string& id) {
  for (const auto& f : m.frames) {
    if (f.id == id) return f;
  }
  throw InvalidInput("unknown frame id " + id);
}

std::vector<TrainSample> load_samples(const ProjectManifest& m, const std::vector<std::string>& ids) {
  std::vector<TrainSample> out;
  for (const auto& id : ids) {
    TrainSample s;
    s.theta = frame_by_id(m, id).pose.theta;
    s.target = make_target(load_bundle(m.bake_dir(), id), m.decoder.out_resolution);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TrainReport cmd_train(const ProjectManifest& m) {
  if (!fs::exists(m.select_file())) throw InvalidInput("train: run select first");
  const json sel = json::parse(read_text_file(m.select_file()));
  const auto train_ids = sel.at("training").get<std::vector<std::string>>();
  const auto val_ids = sel.at("validation").get<std::vector<std::string>>();

  json inputs = {{"revision", kPipelineRevision},
                 {"decoder", decoder_json(m.decoder)},
                 {"train", train_json(m.train)},
                 {"seed", m.seed},
                 {"training", train_ids},
                 {"validation", val_ids}};
  for (const auto& id : train_ids) {
    inputs["bundles"][id] = json::parse(read_text_file(m.bake_dir() / (id + ".json"))).at("config_hash");
  }
  for (const auto& id : val_ids) {
    inputs["bundles"][id] = json::parse(read_text_file(m.bake_dir() / (id + ".json"))).at("config_hash");
  }
  const std::string hash = sha256_hex(inputs.dump());
  const fs::path dir = m.train_dir();
  TrainReport report;
  report.parameters = param_count(m.decoder);
  const fs::path sidecar = dir / "weights.json";
  if (fs::exists(sidecar) && fs::exists(dir / "weights.avhw")) {
    const json s = json::parse(read_text_file(sidecar));
    if (s.value("config_hash", "") == hash) {
      report.cached = true;
      report.final_train_loss = s.value("final_train_loss", 0.0);
      report.final_validation_loss = s.value("final_validation_loss", 0.0);
      spdlog::info("train: weights up to date");
      return report;
    }
  }

  const auto training = load_samples(m, train_ids);
  const auto validation = load_samples(m, val_ids);
  TrainConfig tc = m.train;
  tc.seed = m.seed;
  const TrainResult result = train(training, validation, m.decoder, tc);
  save_weights(result.weights, dir / "weights.avhw");
  write_loss_csv(result.epochs, dir / "loss.csv");
  write_text_file(dir / "params.txt", param_report(m.decoder).text());
  report.final_train_loss = evaluate(result.weights, training);
  report.final_validation_loss = validation.empty() ? 0.0 : evaluate(result.weights, validation);
  const json side = {{"config_hash", hash},
                     {"parameters", report.parameters},
                     {"steps", result.step_losses.size()},
                     {"final_train_loss", report.final_train_loss},
                     {"final_validation_loss", report.final_validation_loss}};
  write_text_file(sidecar, side.dump(2) + "\n");
  spdlog::info("train: {} parameters, train loss {:.6g}, validation loss {:.6g}", report.parameters,
               report.final_train_loss, report.final_validation_loss);
  return report;
}

// ---------------------------------------------------------------------------------------------
// Synth and inspect

std::vector<Pose> load_poses(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const std::exception& e) {
    throw InvalidInput("cannot read poses " + path.string() + ": " + e.what());
  }
  if (j.is_object() && j.contains("poses")) j = j["poses"];
  std::vector<Pose> out;
  try {
    if (j.is_array()) {
      for (const auto& p : j) out.push_back(pose_from_json(p));
    } else {
      out.push_back(pose_from_json(j));
    }
  } catch (const InvalidInput&) {
    throw;
  } catch (const std::exception& e) {
    throw InvalidInput("poses " + path.string() + ": " + e.what());
  }
  if (out.empty()) throw InvalidInput("poses " + path.string() + ": no poses");
  return out;
}

std::vector<fs::path> cmd_synth(const ProjectManifest& m, const std::vector<Pose>& poses, const std::string& name,
                                bool preview) {
  const fs::path wfile = m.train_dir() / "weights.avhw";
  if (!fs::exists(wfile)) throw InvalidInput("synth: no trained weights at " + wfile.string());
  const DecoderWeights weights = load_weights(wfile);
  const SkinnedTemplate tmpl = load_template(m.template_path);
  std::optional<FloatGrid> mask;
  if (!m.synth.finger_mask.empty()) mask = image_to_grid(read_png(m.synth.finger_mask));
  FloatGrid mask1;
  if (mask) {
    mask1 = FloatGrid(mask->width, mask->height, 1);
    for (std::size_t t = 0; t < mask1.texel_count(); ++t) mask1.data[t] = mask->data[t * mask->channels];
  }
  SynthOptions opt;
  opt.subdivision_levels = m.synth.subdivision_levels;
  opt.finger_mask = mask ? &mask1 : nullptr;
  std::vector<fs::path> written;
  for (std::size_t k = 0; k < poses.size(); ++k) {
    const Synthesis s = synthesize(weights, tmpl, m.shape, poses[k], opt);
    char suffix[32];
    std::snprintf(suffix, sizeof suffix, "_%04zu", k);
    const std::string stem = name + suffix;
    const fs::path obj = m.synth_dir() / (stem + ".obj");
    write_obj(s.mesh, obj, stem + ".png");
    write_pfm(s.displacement, m.synth_dir() / (stem + "_displacement.pfm"));
    if (preview) {
      write_png(render_preview(s.mesh, m.synth.preview_size, m.synth.preview_size),
                m.synth_dir() / (stem + "_preview.png"));
    }
    written.push_back(obj);
  }
  spdlog::info("synth: wrote {} mesh(es) to {}", written.size(), m.synth_dir().string());
  return written;
}

std::vector<fs::path> cmd_inspect(const fs::path& dir, const std::string& stem) {
  const BakeBundle b = load_bundle(dir, stem);
  std::vector<fs::path> out;
  const auto emit = [&](const RgbImage& img, const std::string& suffix) {
    const fs::path p = dir / (stem + suffix);
    write_png(img, p);
    out.push_back(p);
  };
  emit(texture_to_image(b.texture), "_inspect_texture.png");
  float peak = 0.0f;
  for (float v : b.displacement.data) peak = std::max(peak, std::abs(v));
  if (peak <= 0.0f) peak = 1.0f;
  emit(grid_to_image(b.displacement, -peak, peak), "_inspect_displacement.png");
  emit(grid_to_image(b.confidence, 0.0f, 1.0f), "_inspect_kappa.png");
  return out;
}

// ---------------------------------------------------------------------------------------------
// Synthetic data

namespace {

double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

int joint_slot(int joint, int axis) { return 3 * (joint - 1) + axis; }

// Pose quantities the synthetic details depend on.
struct DetailDrivers {
  double elbow, knee, shoulder;
};

DetailDrivers drivers(const Pose& p) {
  return {p.theta[joint_slot(18, 1)], p.theta[joint_slot(4, 0)], p.theta[joint_slot(16, 2)]};
}

Vec3 synthetic_color(const Vec2& uv, const DetailDrivers& d) {
  constexpr double tau = 2.0 * std::numbers::pi;
  const double r = 0.55 + 0.20 * std::sin(tau * 2.0 * uv.x() + 2.0 * d.elbow) + 0.10 * std::cos(tau * 3.0 * uv.y());
  const double g = 0.45 + 0.15 * std::sin(tau * 3.0 * uv.y() + 1.5 * d.knee);
  const double b = 0.35 + 0.10 * std::sin(tau * (uv.x() + uv.y())) + 0.10 * std::cos(d.shoulder);
  return Vec3(r, g, b).cwiseMax(0.0).cwiseMin(1.0);
}

double synthetic_detail(const Vec2& uv, const DetailDrivers& d) {
  constexpr double tau = 2.0 * std::numbers::pi;
  return std::sin(tau * 2.0 * uv.x() + d.elbow) * std::cos(tau * 2.0 * uv.y() + d.knee);
}

}  // namespace

Pose synthetic_pose(int index, std::uint64_t seed) {
  std::mt19937_64 rng(seed * 1000003ULL + static_cast<std::uint64_t>(index));
  Pose p;
  p.theta[joint_slot(16, 2)] = -(0.2 + 0.9 * unit(rng));  // left shoulder down
  p.theta[joint_slot(17, 2)] = 0.2 + 0.9 * unit(rng);     // right shoulder down
  p.theta[joint_slot(18, 1)] = 1.2 * unit(rng);           // left elbow
  p.theta[joint_slot(19, 1)] = -1.2 * unit(rng);          // right elbow
  p.theta[joint_slot(4, 0)] = 0.8 * unit(rng);            // left knee
  p.theta[joint_slot(5, 0)] = 0.8 * unit(rng);            // right knee
  p.theta[joint_slot(1, 0)] = -0.4 * unit(rng);           // left hip
  p.theta[joint_slot(2, 0)] = -0.4 * unit(rng);           // right hip
  p.theta[joint_slot(3, 0)] = 0.15 * (unit(rng) - 0.5);   // spine
  p.theta[joint_slot(15, 1)] = 0.4 * (unit(rng) - 0.5);   // head
  p.global_translation = Vec3(0.1 * (unit(rng) - 0.5), 0.0, 0.1 * (unit(rng) - 0.5));
  p.global_rotation = Vec3(0.0, 0.3 * (unit(rng) - 0.5), 0.0);
  return p;
}

TriMesh synthetic_scan(const SkinnedTemplate& tmpl, const Shape& shape, const Pose& pose,
                       const SyntheticOptions& options, bool partial) {
  TriMesh scan = subdivide(pose_mesh(tmpl, shape, pose), 1);
  scan = compute_normals(std::move(scan));
  const DetailDrivers d = drivers(pose);
  const auto uvs = vertex_uvs(scan);
  for (std::size_t v = 0; v < scan.vertices.size(); ++v) {
    const double detail = uvs[v] ? synthetic_detail(*uvs[v], d) : 0.0;
    scan.vertices[v] += (options.offset + options.detail_amplitude * detail) * scan.vertex_normals[v];
  }
  if (partial) {
    // Keep only the lower body, as if the capture had lost the upper half.
    TriMesh cut;
    cut.vertices = scan.vertices;
    for (std::size_t f = 0; f < scan.faces.size(); ++f) {
      const auto& fc = scan.faces[f];
      const double y = (scan.vertices[fc[0]].y() + scan.vertices[fc[1]].y() + scan.vertices[fc[2]].y()) / 3.0;
      if (y > 0.9) continue;
      cut.faces.push_back(fc);
      cut.uv_corners.push_back(scan.uv_corners[f]);
    }
    scan = std::move(cut);
  }
  scan = compute_normals(std::move(scan));
  const int n = options.texture_size;
  RgbImage tex(n, n);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const Vec3 c = synthetic_color(texel_center_uv(x, y, n, n), d);
      for (int k = 0; k < 3; ++k) tex.at(x, y, k) = static_cast<std::uint8_t>(std::lround(c[k] * 255.0));
    }
  }
  scan.texture = std::move(tex);
  return scan;
}

fs::path make_synthetic_project(const fs::path& dir, const SyntheticOptions& o) {
  fs::create_directories(dir / "template");
  fs::create_directories(dir / "scans");
  const SkinnedTemplate tmpl = make_capsule_person();
  save_template(tmpl, dir / "template" / "template.json");
  ProjectManifest m;
  m.path = fs::absolute(dir / "project.json");
  m.template_path = fs::absolute(dir / "template" / "template.json");
  m.shape.beta.assign(tmpl.shape_count(), 0.0);
  if (tmpl.shape_count() > 1) m.shape.beta[1] = 0.5;
  m.output_dir = fs::absolute(dir / "out");
  m.seed = o.seed;
  m.bake.resolution = o.bake_resolution;
  m.select.frames = 4;
  m.select.validation = 2;
  m.decoder.fc_size = 8;
  m.decoder.latent_size = 32;
  m.decoder.hidden_size = 64;
  m.decoder.out_resolution = o.bake_resolution;
  m.train.batch = 4;
  m.train.epochs = 60;
  for (int i = 0; i < o.frames; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "f%03d", i);
    FrameRecord r;
    r.id = id;
    r.pose = synthetic_pose(i, o.seed);
    r.scan = fs::absolute(dir / "scans" / (r.id + ".obj"));
    const TriMesh scan = synthetic_scan(tmpl, m.shape, r.pose, o, i == o.broken_frame);
    write_obj(scan, r.scan, r.id + ".png");
    m.frames.push_back(std::move(r));
  }
  save_manifest(m);
  return m.path;
}

}  // namespace avh
