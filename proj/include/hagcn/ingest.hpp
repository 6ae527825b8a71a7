#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "hagcn/graph.hpp"
#include "hagcn/tensor.hpp"

namespace hagcn {

inline constexpr std::size_t kMaxPersons = 2;

// Joint coordinates laid out [person][frame][joint][channel].
struct SkeletonSequence {
  std::size_t persons = 0;
  std::size_t frames = 0;
  std::size_t joints = 0;
  std::size_t channels = 0;
  std::vector<double> coords;
  std::int64_t label = -1;
  std::size_t valid_frames = 0;
  std::string source_id;

  SkeletonSequence() = default;
  SkeletonSequence(std::size_t m, std::size_t t, std::size_t v, std::size_t c);

  double& at(std::size_t m, std::size_t t, std::size_t v, std::size_t c) {
    return coords[((m * frames + t) * joints + v) * channels + c];
  }
  double at(std::size_t m, std::size_t t, std::size_t v, std::size_t c) const {
    return coords[((m * frames + t) * joints + v) * channels + c];
  }
  bool operator==(const SkeletonSequence&) const = default;
};

enum class StreamKind { joint, bone, joint_motion, bone_motion };
inline constexpr StreamKind kAllStreams[] = {StreamKind::joint, StreamKind::bone, StreamKind::joint_motion,
                                             StreamKind::bone_motion};
std::string stream_name(StreamKind s);
StreamKind parse_stream(const std::string& name);

enum class Augment { none, kinetics };

// NTU RGB+D ".skeleton" text: frame count, then per frame a body count and per
// body a metadata line, a joint count (25) and one line per joint whose first
// three reals are x y z.
SkeletonSequence parse_ntu_skeleton(const std::string& text);
std::string serialize_ntu_skeleton(const SkeletonSequence& seq);

// Keypoint JSON as produced for the Kinetics skeleton set: "data" holds frames
// with "skeleton" entries of 36 interleaved x/y "pose" values and 18 "score"
// values. Confidence becomes channel 2. More than two people in a frame keeps
// the two with the highest mean confidence.
SkeletonSequence parse_openpose_json(const std::string& text);
std::string serialize_openpose_json(const SkeletonSequence& seq);

SkeletonSequence load_skeleton_file(const std::string& path);

// bone[child] = joint[child] - joint[parent]; roots map to zero.
SkeletonSequence to_bone(const SkeletonSequence& seq, const GraphSpec& graph);
// motion[t] = x[t+1] - x[t]; the last valid frame maps to zero.
SkeletonSequence to_motion(const SkeletonSequence& seq);
SkeletonSequence to_stream(const SkeletonSequence& joints, StreamKind stream, const GraphSpec& graph);

// Random in-plane rotation in [-10, 10] degrees and translation in [-0.1, 0.1]
// on channels 0 and 1; absent (all-zero) person frames are left untouched.
SkeletonSequence augment_kinetics(const SkeletonSequence& seq, std::mt19937_64& rng);

struct BatchOptions {
  std::size_t max_frames = 300;
  std::size_t max_persons = kMaxPersons;
  Augment augment = Augment::none;
};

// Stacks sequences into (N, M, C, T, V). Short sequences are looped over
// their valid frames, longer ones truncated, absent persons are zero.
Tensor assemble_batch(const std::vector<const SkeletonSequence*>& seqs, StreamKind stream, const GraphSpec& graph,
                      const BatchOptions& opt, std::mt19937_64* rng = nullptr);
Tensor assemble_batch(const std::vector<SkeletonSequence>& seqs, StreamKind stream, const GraphSpec& graph,
                      const BatchOptions& opt, std::mt19937_64* rng = nullptr);

// "HAGD" cache: u64 count, then per sample i64 label, u64 M T V C and the
// valid frames as flat reals.
void write_dataset(const std::string& path, const std::vector<SkeletonSequence>& samples);
std::vector<SkeletonSequence> read_dataset(const std::string& path);

struct ManifestEntry {
  std::string path;
  std::int64_t label;
};
// One "path label" pair per line; '#' comments; relative paths resolve
// against the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::string& path);

}  // namespace hagcn
