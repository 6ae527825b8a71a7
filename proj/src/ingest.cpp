#include "hagcn/ingest.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string_view>

#include "json.hpp"

#include "hagcn/errors.hpp"

namespace hagcn {

SkeletonSequence::SkeletonSequence(std::size_t m, std::size_t t, std::size_t v, std::size_t c)
    : persons(m), frames(t), joints(v), channels(c), coords(m * t * v * c, 0.0), valid_frames(t) {}

std::string stream_name(StreamKind s) {
  switch (s) {
    case StreamKind::joint: return "joint";
    case StreamKind::bone: return "bone";
    case StreamKind::joint_motion: return "joint-motion";
    case StreamKind::bone_motion: return "bone-motion";
  }
  return "?";
}

StreamKind parse_stream(const std::string& name) {
  for (auto s : kAllStreams)
    if (stream_name(s) == name) return s;
  throw ConfigError("unknown stream '" + name + "' (expected joint, bone, joint-motion or bone-motion)");
}

namespace {

constexpr std::size_t kNtuJoints = 25;
constexpr std::size_t kOpenPoseJoints = 18;

class LineReader {
 public:
  explicit LineReader(std::string_view text) : text_(text) {}

  std::string_view next(const char* what) {
    while (pos_ <= text_.size()) {
      if (pos_ == text_.size()) break;
      auto end = text_.find('\n', pos_);
      if (end == std::string_view::npos) end = text_.size();
      std::string_view line = text_.substr(pos_, end - pos_);
      pos_ = end + 1;
      ++lineno_;
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
      return line;
    }
    throw FormatError("truncated skeleton file: expected " + std::string(what) + " after line " +
                      std::to_string(lineno_));
  }

  std::size_t line_number() const { return lineno_; }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
  std::size_t lineno_ = 0;
};

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

double parse_real(std::string_view tok, std::size_t lineno) {
  double v = 0.0;
  const char* first = tok.data();
  if (!tok.empty() && tok.front() == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size() || !std::isfinite(v)) {
    throw FormatError("unparseable real '" + std::string(tok) + "' on line " + std::to_string(lineno));
  }
  return v;
}

std::size_t parse_count(std::string_view line, std::size_t lineno, const char* what) {
  auto toks = split_ws(line);
  long long v = -1;
  if (toks.size() == 1) {
    auto [ptr, ec] = std::from_chars(toks[0].data(), toks[0].data() + toks[0].size(), v);
    if (ec != std::errc() || ptr != toks[0].data() + toks[0].size()) v = -1;
  }
  if (v < 0) throw FormatError("bad " + std::string(what) + " on line " + std::to_string(lineno));
  return static_cast<std::size_t>(v);
}

std::string format_real(double v) {
  std::array<char, 32> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

}  // namespace

SkeletonSequence parse_ntu_skeleton(const std::string& text) {
  LineReader reader(text);
  const std::size_t frames = parse_count(reader.next("frame count"), reader.line_number(), "frame count");
  if (frames > 100000) throw FormatError("implausible frame count " + std::to_string(frames));
  // frame -> body -> joint xyz
  std::vector<std::vector<std::array<double, kNtuJoints * 3>>> bodies(frames);
  std::size_t max_bodies = 0;
  for (std::size_t t = 0; t < frames; ++t) {
    const std::size_t count = parse_count(reader.next("body count"), reader.line_number(), "body count");
    if (count > kMaxPersons) {
      throw FormatError("too many bodies: " + std::to_string(count) + " in frame " + std::to_string(t));
    }
    max_bodies = std::max(max_bodies, count);
    for (std::size_t b = 0; b < count; ++b) {
      reader.next("body metadata");
      const std::size_t joints = parse_count(reader.next("joint count"), reader.line_number(), "joint count");
      if (joints != kNtuJoints) {
        throw FormatError("joint count " + std::to_string(joints) + " != 25 on line " +
                          std::to_string(reader.line_number()));
      }
      auto& xyz = bodies[t].emplace_back();
      for (std::size_t j = 0; j < kNtuJoints; ++j) {
        auto line = reader.next("joint line");
        auto toks = split_ws(line);
        if (toks.size() < 3) {
          throw FormatError("joint line " + std::to_string(reader.line_number()) + " has fewer than 3 values");
        }
        for (std::size_t c = 0; c < 3; ++c) xyz[j * 3 + c] = parse_real(toks[c], reader.line_number());
      }
    }
  }
  SkeletonSequence seq(max_bodies, frames, kNtuJoints, 3);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t b = 0; b < bodies[t].size(); ++b)
      for (std::size_t j = 0; j < kNtuJoints; ++j)
        for (std::size_t c = 0; c < 3; ++c) seq.at(b, t, j, c) = bodies[t][b][j * 3 + c];
  return seq;
}

std::string serialize_ntu_skeleton(const SkeletonSequence& seq) {
  if (seq.joints != kNtuJoints || seq.channels < 3) {
    throw ShapeError("NTU skeletons need 25 joints with 3 coordinates");
  }
  std::ostringstream os;
  os << seq.valid_frames << '\n';
  for (std::size_t t = 0; t < seq.valid_frames; ++t) {
    os << seq.persons << '\n';
    for (std::size_t m = 0; m < seq.persons; ++m) {
      os << m << " 0 0 0 0 0 0 0 0 2\n" << kNtuJoints << '\n';
      for (std::size_t j = 0; j < kNtuJoints; ++j) {
        os << format_real(seq.at(m, t, j, 0)) << ' ' << format_real(seq.at(m, t, j, 1)) << ' '
           << format_real(seq.at(m, t, j, 2)) << " 0 0 0 0 0 0 0 0 2\n";
      }
    }
  }
  return os.str();
}

SkeletonSequence parse_openpose_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("keypoint JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("data") || !doc["data"].is_array()) {
    throw FormatError("keypoint JSON: missing 'data' array");
  }
  struct Body {
    std::array<double, kOpenPoseJoints * 3> xyc;
    double mean_score;
  };
  const auto& data = doc["data"];
  std::vector<std::pair<std::size_t, std::vector<Body>>> frames;
  std::size_t num_frames = 0;
  for (std::size_t f = 0; f < data.size(); ++f) {
    const auto& frame = data[f];
    if (!frame.is_object()) throw FormatError("keypoint JSON: frame " + std::to_string(f) + " is not an object");
    std::size_t index = f;
    if (frame.contains("frame_index")) {
      const auto fi = frame["frame_index"];
      if (!fi.is_number_integer() || fi.get<long long>() < 1) {
        throw FormatError("keypoint JSON: bad frame_index in frame " + std::to_string(f));
      }
      index = static_cast<std::size_t>(fi.get<long long>() - 1);
    }
    if (index > 100000) throw FormatError("keypoint JSON: implausible frame_index");
    num_frames = std::max(num_frames, index + 1);
    std::vector<Body> bodies;
    if (frame.contains("skeleton")) {
      for (const auto& sk : frame["skeleton"]) {
        if (!sk.contains("pose") || !sk.contains("score")) throw FormatError("keypoint JSON: skeleton without pose/score");
        const auto& pose = sk["pose"];
        const auto& score = sk["score"];
        if (!pose.is_array() || !score.is_array() || pose.size() != 2 * kOpenPoseJoints ||
            score.size() != kOpenPoseJoints) {
          throw FormatError("keypoint JSON: expected 36 pose and 18 score values");
        }
        Body b{};
        double total = 0.0;
        for (std::size_t j = 0; j < kOpenPoseJoints; ++j) {
          if (!pose[2 * j].is_number() || !pose[2 * j + 1].is_number() || !score[j].is_number()) {
            throw FormatError("keypoint JSON: non-numeric keypoint value");
          }
          b.xyc[j * 3 + 0] = pose[2 * j].get<double>();
          b.xyc[j * 3 + 1] = pose[2 * j + 1].get<double>();
          b.xyc[j * 3 + 2] = score[j].get<double>();
          total += b.xyc[j * 3 + 2];
        }
        b.mean_score = total / kOpenPoseJoints;
        bodies.push_back(b);
      }
    }
    std::stable_sort(bodies.begin(), bodies.end(),
                     [](const Body& a, const Body& b) { return a.mean_score > b.mean_score; });
    if (bodies.size() > kMaxPersons) bodies.resize(kMaxPersons);
    frames.emplace_back(index, std::move(bodies));
  }
  std::size_t persons = num_frames ? 1 : 0;
  for (const auto& [idx, bodies] : frames) persons = std::max(persons, bodies.size());
  SkeletonSequence seq(persons, num_frames, kOpenPoseJoints, 3);
  for (const auto& [t, bodies] : frames)
    for (std::size_t m = 0; m < bodies.size(); ++m)
      for (std::size_t j = 0; j < kOpenPoseJoints; ++j)
        for (std::size_t c = 0; c < 3; ++c) seq.at(m, t, j, c) = bodies[m].xyc[j * 3 + c];
  if (doc.contains("label_index") && doc["label_index"].is_number_integer()) {
    seq.label = doc["label_index"].get<std::int64_t>();
  }
  return seq;
}

std::string serialize_openpose_json(const SkeletonSequence& seq) {
  if (seq.joints != kOpenPoseJoints || seq.channels != 3) {
    throw ShapeError("keypoint JSON needs 18 joints with x, y, score channels");
  }
  nlohmann::json data = nlohmann::json::array();
  for (std::size_t t = 0; t < seq.valid_frames; ++t) {
    nlohmann::json skeletons = nlohmann::json::array();
    for (std::size_t m = 0; m < seq.persons; ++m) {
      std::vector<double> pose, score;
      for (std::size_t j = 0; j < kOpenPoseJoints; ++j) {
        pose.push_back(seq.at(m, t, j, 0));
        pose.push_back(seq.at(m, t, j, 1));
        score.push_back(seq.at(m, t, j, 2));
      }
      skeletons.push_back({{"pose", pose}, {"score", score}});
    }
    data.push_back({{"frame_index", t + 1}, {"skeleton", skeletons}});
  }
  nlohmann::json doc = {{"data", data}};
  if (seq.label >= 0) doc["label_index"] = seq.label;
  return doc.dump();
}

SkeletonSequence load_skeleton_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open skeleton file " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  const auto ext = std::filesystem::path(path).extension().string();
  SkeletonSequence seq;
  if (ext == ".json") {
    seq = parse_openpose_json(ss.str());
  } else if (ext == ".skeleton") {
    seq = parse_ntu_skeleton(ss.str());
  } else {
    throw FormatError("unknown skeleton file extension '" + ext + "' for " + path);
  }
  seq.source_id = std::filesystem::path(path).filename().string();
  return seq;
}

SkeletonSequence to_bone(const SkeletonSequence& seq, const GraphSpec& graph) {
  if (seq.joints != graph.num_joints()) {
    throw ShapeError("to_bone: sequence has " + std::to_string(seq.joints) + " joints, graph has " +
                     std::to_string(graph.num_joints()));
  }
  SkeletonSequence out = seq;
  for (std::size_t m = 0; m < seq.persons; ++m)
    for (std::size_t t = 0; t < seq.frames; ++t)
      for (std::size_t v = 0; v < seq.joints; ++v) {
        const auto parent = graph.parent_of(v);
        for (std::size_t c = 0; c < seq.channels; ++c)
          out.at(m, t, v, c) = parent ? seq.at(m, t, v, c) - seq.at(m, t, *parent, c) : 0.0;
      }
  return out;
}

SkeletonSequence to_motion(const SkeletonSequence& seq) {
  SkeletonSequence out = seq;
  std::fill(out.coords.begin(), out.coords.end(), 0.0);
  const std::size_t valid = std::min(seq.valid_frames, seq.frames);
  for (std::size_t m = 0; m < seq.persons; ++m)
    for (std::size_t t = 0; t + 1 < valid; ++t)
      for (std::size_t v = 0; v < seq.joints; ++v)
        for (std::size_t c = 0; c < seq.channels; ++c) out.at(m, t, v, c) = seq.at(m, t + 1, v, c) - seq.at(m, t, v, c);
  return out;
}

SkeletonSequence to_stream(const SkeletonSequence& joints, StreamKind stream, const GraphSpec& graph) {
  switch (stream) {
    case StreamKind::joint: return joints;
    case StreamKind::bone: return to_bone(joints, graph);
    case StreamKind::joint_motion: return to_motion(joints);
    case StreamKind::bone_motion: return to_motion(to_bone(joints, graph));
  }
  throw ConfigError("unknown stream kind");
}

SkeletonSequence augment_kinetics(const SkeletonSequence& seq, std::mt19937_64& rng) {
  if (seq.channels < 2) throw ShapeError("augment_kinetics: need at least 2 coordinate channels");
  std::uniform_real_distribution<double> angle_dist(-10.0, 10.0);
  std::uniform_real_distribution<double> shift_dist(-0.1, 0.1);
  const double theta = angle_dist(rng) * std::numbers::pi / 180.0;
  const double dx = shift_dist(rng);
  const double dy = shift_dist(rng);
  const double cs = std::cos(theta), sn = std::sin(theta);
  SkeletonSequence out = seq;
  for (std::size_t m = 0; m < seq.persons; ++m)
    for (std::size_t t = 0; t < seq.frames; ++t) {
      bool present = false;
      for (std::size_t v = 0; v < seq.joints && !present; ++v)
        for (std::size_t c = 0; c < seq.channels && !present; ++c) present = seq.at(m, t, v, c) != 0.0;
      if (!present) continue;
      for (std::size_t v = 0; v < seq.joints; ++v) {
        const double x = seq.at(m, t, v, 0), y = seq.at(m, t, v, 1);
        out.at(m, t, v, 0) = cs * x - sn * y + dx;
        out.at(m, t, v, 1) = sn * x + cs * y + dy;
      }
    }
  return out;
}

Tensor assemble_batch(const std::vector<const SkeletonSequence*>& seqs, StreamKind stream, const GraphSpec& graph,
                      const BatchOptions& opt, std::mt19937_64* rng) {
  if (seqs.empty()) throw ShapeError("assemble_batch: empty batch");
  if (opt.max_frames == 0 || opt.max_persons == 0) throw ConfigError("assemble_batch: max_frames and max_persons must be >= 1");
  if (opt.augment == Augment::kinetics && !rng) throw ConfigError("assemble_batch: augmentation needs a random generator");
  const std::size_t n = seqs.size(), mmax = opt.max_persons, tmax = opt.max_frames, v = graph.num_joints();
  const std::size_t c = seqs.front()->channels;
  Tensor out({n, mmax, c, tmax, v});
  for (std::size_t s = 0; s < n; ++s) {
    const SkeletonSequence& raw = *seqs[s];
    if (raw.joints != v || raw.channels != c) {
      throw ShapeError("assemble_batch: sample " + std::to_string(s) + " has " + std::to_string(raw.joints) +
                       " joints x " + std::to_string(raw.channels) + " channels, expected " + std::to_string(v) +
                       " x " + std::to_string(c));
    }
    const SkeletonSequence seq =
        to_stream(opt.augment == Augment::kinetics ? augment_kinetics(raw, *rng) : raw, stream, graph);
    const std::size_t valid = std::min(seq.valid_frames, seq.frames);
    if (valid == 0) continue;
    const std::size_t persons = std::min(seq.persons, mmax);
    for (std::size_t m = 0; m < persons; ++m)
      for (std::size_t t = 0; t < tmax; ++t) {
        const std::size_t src = t % valid;
        for (std::size_t j = 0; j < v; ++j)
          for (std::size_t ch = 0; ch < c; ++ch)
            out[(((s * mmax + m) * c + ch) * tmax + t) * v + j] = seq.at(m, src, j, ch);
      }
  }
  return out;
}

Tensor assemble_batch(const std::vector<SkeletonSequence>& seqs, StreamKind stream, const GraphSpec& graph,
                      const BatchOptions& opt, std::mt19937_64* rng) {
  std::vector<const SkeletonSequence*> ptrs;
  ptrs.reserve(seqs.size());
  for (const auto& s : seqs) ptrs.push_back(&s);
  return assemble_batch(ptrs, stream, graph, opt, rng);
}

namespace {
constexpr std::array<char, 4> kDatasetMagic = {'H', 'A', 'G', 'D'};
}

void write_dataset(const std::string& path, const std::vector<SkeletonSequence>& samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write dataset cache " + path);
  out.write(kDatasetMagic.data(), kDatasetMagic.size());
  write_u64(out, samples.size());
  for (const auto& s : samples) {
    const std::size_t valid = std::min(s.valid_frames, s.frames);
    write_i64(out, s.label);
    write_u64(out, s.persons);
    write_u64(out, valid);
    write_u64(out, s.joints);
    write_u64(out, s.channels);
    for (std::size_t m = 0; m < s.persons; ++m) {
      const double* first = s.coords.data() + m * s.frames * s.joints * s.channels;
      write_f64_array(out, std::span<const double>(first, valid * s.joints * s.channels));
    }
  }
  if (!out) throw FormatError("failed writing dataset cache " + path);
}

std::vector<SkeletonSequence> read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open dataset cache " + path);
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kDatasetMagic) {
    throw FormatError("bad dataset cache magic in " + path);
  }
  const auto count = read_u64(in);
  if (count > (1u << 24)) throw FormatError("implausible sample count in " + path);
  std::vector<SkeletonSequence> samples;
  samples.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto label = read_i64(in);
    const auto m = read_u64(in), t = read_u64(in), v = read_u64(in), c = read_u64(in);
    if (m > kMaxPersons || t > 100000 || v > 1000 || c > 16) {
      throw FormatError("implausible sample dimensions in " + path);
    }
    SkeletonSequence s(m, t, v, c);
    s.label = label;
    read_f64_array(in, s.coords);
    s.source_id = path + "#" + std::to_string(i);
    samples.push_back(std::move(s));
  }
  return samples;
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest " + path);
  const auto base = std::filesystem::path(path).parent_path();
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string file;
    if (!(ls >> file)) continue;
    long long label = -1;
    std::string rest;
    if (!(ls >> label) || (ls >> rest) || label < 0) {
      throw FormatError("manifest line " + std::to_string(lineno) + ": expected 'path label'");
    }
    std::filesystem::path p(file);
    if (p.is_relative()) p = base / p;
    entries.push_back({p.string(), label});
  }
  return entries;
}

}  // namespace hagcn
