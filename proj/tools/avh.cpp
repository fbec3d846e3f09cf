// avh: command-line driver for the bake / select / train / synth pipeline.
//
// Exit codes: 0 success, 1 partial failure (some frames failed), 2 invalid input.

#include <cstdlib>
#include <iostream>
#include <string>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "avh/pipeline.hpp"

namespace {

void configure_logging() {
  const char* env = std::getenv("AVH_LOG");
  if (!env) {
    spdlog::set_level(spdlog::level::info);
    return;
  }
  const auto level = spdlog::level::from_str(env);
  // from_str returns "off" for unknown names; only honour "off" when asked for explicitly.
  if (level == spdlog::level::off && std::string(env) != "off") {
    spdlog::warn("AVH_LOG={} not recognized; using info", env);
    spdlog::set_level(spdlog::level::info);
  } else {
    spdlog::set_level(level);
  }
}

struct Common {
  std::string manifest;
  int jobs = 1;
  std::string frames;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c, bool with_frames) {
  cmd->add_option("--manifest", c.manifest, "Project manifest (JSON)")->required();
  cmd->add_option("--jobs", c.jobs, "Worker threads for per-frame work")->check(CLI::PositiveNumber);
  if (with_frames) cmd->add_option("--frames", c.frames, "Frame index range a..b (inclusive)");
  cmd->add_option("--seed", c.seed, "Override the manifest seed");
}

avh::ProjectManifest open_manifest(const Common& c) {
  avh::ProjectManifest m = avh::load_manifest(c.manifest);
  if (c.seed) {
    m.seed = *c.seed;
    m.train.seed = *c.seed;
  }
  return m;
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  CLI::App app{"Animatable virtual human pipeline"};
  app.require_subcommand(1);

  Common common;
  auto* bake = app.add_subcommand("bake", "Register, bake, score and inpaint scan frames");
  add_common(bake, common, true);

  int select_f = 0;
  auto* select = app.add_subcommand("select", "Pick training and validation frames by pose clustering");
  add_common(select, common, false);
  select->add_option("-f,--count", select_f, "Number of training frames (default: manifest)");

  auto* train = app.add_subcommand("train", "Train the pose-conditioned decoder on the selected frames");
  add_common(train, common, false);

  std::string poses_file;
  std::string synth_name = "synth";
  bool preview = false;
  auto* synth = app.add_subcommand("synth", "Synthesize displaced, textured meshes for poses");
  add_common(synth, common, true);
  synth->add_option("--poses", poses_file, "JSON pose or pose sequence; default: the manifest frames");
  synth->add_option("--name", synth_name, "Output file stem");
  synth->add_flag("--preview", preview, "Also write an orthographic shaded PNG per mesh");

  std::string bundle;
  auto* inspect = app.add_subcommand("inspect", "Write PNG previews of baked bundles");
  inspect->add_option("--manifest", common.manifest, "Project manifest (JSON)");
  inspect->add_option("--frames", common.frames, "Frame index range a..b (inclusive)");
  inspect->add_option("--bundle", bundle, "Bundle path without suffix, e.g. out/bake/f000");

  std::string demo_dir;
  avh::SyntheticOptions demo;
  auto* make = app.add_subcommand("make-synthetic", "Write a synthetic capsule-person project");
  make->add_option("--out", demo_dir, "Project directory")->required();
  make->add_option("--frames", demo.frames, "Number of frames")->check(CLI::PositiveNumber);
  make->add_option("--resolution", demo.bake_resolution, "Bake and decoder resolution");
  make->add_option("--seed", demo.seed, "Pose seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*make) {
      const auto path = avh::make_synthetic_project(demo_dir, demo);
      std::cout << path.string() << "\n";
      return 0;
    }
    if (*inspect) {
      std::vector<std::filesystem::path> written;
      if (!bundle.empty()) {
        const std::filesystem::path b(bundle);
        written = avh::cmd_inspect(b.parent_path(), b.filename().string());
      } else {
        if (common.manifest.empty()) throw avh::InvalidInput("inspect: give --bundle or --manifest");
        const auto m = avh::load_manifest(common.manifest);
        for (std::size_t i : avh::parse_frame_range(common.frames, m.frames.size())) {
          const auto w = avh::cmd_inspect(m.bake_dir(), m.frames[i].id);
          written.insert(written.end(), w.begin(), w.end());
        }
      }
      for (const auto& p : written) std::cout << p.string() << "\n";
      return 0;
    }

    const avh::ProjectManifest m = open_manifest(common);
    if (*bake) {
      const auto report = avh::cmd_bake(m, avh::parse_frame_range(common.frames, m.frames.size()), common.jobs);
      for (const auto& r : report.frames) {
        std::cout << r.id << " " << r.status;
        if (r.status == "failed") std::cout << " " << r.error;
        else std::cout << " mean_kappa=" << r.mean_confidence << (r.keep ? " kept" : " discarded");
        std::cout << "\n";
      }
      return report.failed() > 0 ? 1 : 0;
    }
    if (*select) {
      const auto r = avh::cmd_select(m, select_f);
      std::cout << "training " << r.training.size() << " validation " << r.validation.size() << " degenerate "
                << r.degenerate_clusters << "\n";
      return 0;
    }
    if (*train) {
      const auto r = avh::cmd_train(m);
      std::cout << "parameters " << r.parameters << " train_loss " << r.final_train_loss << " validation_loss "
                << r.final_validation_loss << (r.cached ? " (cached)" : "") << "\n";
      return 0;
    }
    if (*synth) {
      std::vector<avh::Pose> poses;
      if (!poses_file.empty()) {
        poses = avh::load_poses(poses_file);
      } else {
        for (std::size_t i : avh::parse_frame_range(common.frames, m.frames.size())) poses.push_back(m.frames[i].pose);
      }
      for (const auto& p : avh::cmd_synth(m, poses, synth_name, preview)) std::cout << p.string() << "\n";
      return 0;
    }
  } catch (const avh::InvalidInput& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
