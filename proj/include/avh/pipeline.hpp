#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "avh/baking.hpp"
#include "avh/confidence.hpp"
#include "avh/decoder.hpp"
#include "avh/inpaint.hpp"
#include "avh/registration.hpp"
#include "avh/skinning.hpp"

namespace avh {

/// Malformed manifest, missing inputs, impossible requests. The CLI maps it to exit code 2.
class InvalidInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FrameRecord {
  std::string id;
  Pose pose;
  std::filesystem::path scan;  // absolute after loading
};

struct SelectConfig {
  int frames = 100;
  int validation = 10;
  int max_iters = 300;
  double rel_tol = 1e-6;
};

struct SynthConfig {
  int subdivision_levels = 2;
  std::filesystem::path finger_mask;  // optional 1-channel PNG in template UV space
  int preview_size = 512;
};

struct ProjectManifest {
  std::filesystem::path path;  // manifest file; relative paths resolve against its directory
  std::filesystem::path template_path;
  Shape shape;
  std::vector<FrameRecord> frames;
  std::filesystem::path output_dir;
  std::uint64_t seed = 0;

  RegistrationParams registration;
  BakeConfig bake;
  double outlier_limit = 0.05;
  ConfidenceConfig confidence;
  InpaintOptions inpaint;
  SelectConfig select;
  DecoderConfig decoder;
  TrainConfig train;
  SynthConfig synth;

  /// Unique frame ids, existing template, consistent shape size. Throws InvalidInput.
  void validate() const;
  std::filesystem::path bake_dir() const { return output_dir / "bake"; }
  std::filesystem::path select_file() const { return output_dir / "select" / "selection.json"; }
  std::filesystem::path train_dir() const { return output_dir / "train"; }
  std::filesystem::path synth_dir() const { return output_dir / "synth"; }
};

ProjectManifest load_manifest(const std::filesystem::path& path);
nlohmann::json manifest_to_json(const ProjectManifest& m);  // paths relative to the manifest directory
void save_manifest(const ProjectManifest& m);

nlohmann::json pose_to_json(const Pose& pose);
Pose pose_from_json(const nlohmann::json& j);

/// Inclusive index range "a..b", a single index "a", or empty for all frames.
std::vector<std::size_t> parse_frame_range(const std::string& spec, std::size_t frame_count);

struct FrameResult {
  std::string id;
  std::string status;  // "baked", "cached", "failed"
  std::string error;
  double mean_confidence = 0.0;
  bool keep = false;
  std::string config_hash;
};

/// Hash of everything that determines a frame's bundle: template files, shape, pose, scan file,
/// and the registration / bake / confidence / outlier / inpaint settings.
std::string frame_config_hash(const ProjectManifest& m, const FrameRecord& frame);

/// pose -> register -> bake -> confidence -> outlier filter -> inpaint -> write, for one frame.
/// Skips the work when an up-to-date bundle with the same config hash exists.
FrameResult bake_one(const ProjectManifest& m, const SkinnedTemplate& tmpl, const FrameRecord& frame);

struct BakeReport {
  std::vector<FrameResult> frames;
  std::size_t failed() const;
};

/// Bakes the selected frames with `jobs` worker threads and writes bake/quality.json.
BakeReport cmd_bake(const ProjectManifest& m, const std::vector<std::size_t>& frames, int jobs);

struct SelectReport {
  std::vector<std::string> training;
  std::vector<std::string> validation;
  std::size_t degenerate_clusters = 0;
};

/// Frame selection over kept, baked frames; writes select/selection.json. `f` < 1 uses the manifest value.
SelectReport cmd_select(const ProjectManifest& m, int f);

struct TrainReport {
  std::size_t parameters = 0;
  double final_train_loss = 0.0;
  double final_validation_loss = 0.0;
  bool cached = false;
};

/// Trains on the selected frames; writes train/weights.avhw, train/loss.csv, train/params.txt and
/// train/weights.json (config hash). Skips training when the hash matches.
TrainReport cmd_train(const ProjectManifest& m);

/// Renders one mesh per pose into synth/<name>_<k>.obj (+ .mtl, .png); optional preview PNGs.
/// Returns the written OBJ paths.
std::vector<std::filesystem::path> cmd_synth(const ProjectManifest& m, const std::vector<Pose>& poses,
                                             const std::string& name, bool preview);

/// Poses from a JSON file: one pose object, an array of them, or {"poses": [...]}.
std::vector<Pose> load_poses(const std::filesystem::path& path);

/// PNG previews of a bundle's texture, normalized displacement and kappa next to the bundle.
std::vector<std::filesystem::path> cmd_inspect(const std::filesystem::path& dir, const std::string& stem);

struct SyntheticOptions {
  int frames = 12;
  int bake_resolution = 64;
  int texture_size = 256;
  double offset = 0.02;            // constant displacement along the normal, meters
  double detail_amplitude = 0.004; // pose-dependent extra displacement, meters
  int broken_frame = 5;            // frame with a partial scan (fails quality gating); -1 for none
  std::uint64_t seed = 7;
};

/// Deterministic pose for synthetic frame `index`.
Pose synthetic_pose(int index, std::uint64_t seed);

/// Scan of a posed template: subdivided once, pushed out along vertex normals by offset plus a
/// pose-dependent detail term, textured with a pose-dependent pattern in the template's UV layout.
TriMesh synthetic_scan(const SkinnedTemplate& tmpl, const Shape& shape, const Pose& pose,
                       const SyntheticOptions& options, bool partial = false);

/// Writes a complete synthetic project (template, scans, manifest) under `dir`; returns the manifest path.
std::filesystem::path make_synthetic_project(const std::filesystem::path& dir, const SyntheticOptions& options);

}  // namespace avh
