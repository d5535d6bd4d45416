#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "lgd/rng.hpp"
#include "lgd/tensor.hpp"

namespace lgd {

// Synthetic global-motion task. Each video contains one large "carrier"
// shape and smaller distractor shapes moving with integer velocities on a
// toroidal frame. The label is the scene's motion pattern:
//
//   0 static                         3 carrier diagonal   (+-1,+-1)
//   1 carrier horizontal (+-1,0)     4 distractors move (one shared axis)
//   2 carrier vertical   (0,+-1)     5 global pan (carrier + distractors)
//
// Classes depend only on which shapes move and on per-axis speeds, never on
// signs, so a horizontal flip cannot change a label. Start positions are
// uniform and the wrap keeps the position marginal uniform at every step, so
// a single frame carries no class information; only cross-frame displacement
// does. Displacement is made observable to pooled features by position
// coding: a shape's fill intensity follows a wrap-continuous triangle wave of
// its position. The carrier body codes x in the red channel; a corner badge
// on the carrier codes y in green; distractors code a mixed coordinate in
// blue. Motion makes the corresponding intensities vary across frames while
// a single frame stays uninformative (positions, hence codes, are uniform).
struct SyntheticVideoSpec {
  Index height = 32, width = 32;
  Index length = 24;
  Index num_shapes = 3;  // 1 carrier + distractors
  Index num_classes = 6;
  Index num_videos = 600;
  Index carrier_size = 12;
  Index distractor_size = 8;
  double noise = 0.01;
  double background_amplitude = 0.0;  // optional sinusoid background texture
  double time_code = 0.0;             // optional carrier brightness ramp over the video
  bool position_code = true;          // discrete position-coded shape colors
  std::uint64_t seed = 0;

  void validate() const {
    require(height >= 2 && width >= 2 && length >= 1, "synthetic spec: degenerate frame/length");
    require(num_shapes >= 1, "synthetic spec: needs at least one shape");
    require(num_classes == 6, "synthetic spec: the motion task defines exactly 6 classes");
    require(num_videos >= 1, "synthetic spec: needs at least one video");
    require(carrier_size >= 1 && carrier_size <= std::min(height, width),
            "synthetic spec: carrier shape larger than frame");
    require(distractor_size >= 1 && distractor_size <= std::min(height, width),
            "synthetic spec: distractor shape larger than frame");
    if (position_code)
      require(carrier_size >= 3, "synthetic spec: coded carrier needs room for the corner badge");
    require(noise >= 0.0 && background_amplitude >= 0.0 && time_code >= 0.0,
            "synthetic spec: magnitudes must be >= 0");
  }
};

struct ShapeLatent {
  bool carrier = false;
  Index x0 = 0, y0 = 0;  // top-left at t = 0
  Index vx = 0, vy = 0;  // pixels per frame
  Index size = 1;
  double value = 1.0;  // base brightness
};

struct VideoLatent {
  Index label = 0;
  std::vector<ShapeLatent> shapes;
};

struct VideoDataset {
  Index channels = 3;
  Index length = 0, height = 0, width = 0;
  std::vector<Tensor<float>> videos;  // each [C,L,H,W]
  std::vector<Index> labels;
  std::vector<VideoLatent> latents;

  Index size() const { return static_cast<Index>(videos.size()); }
};

inline Index wrap(Index v, Index m) { return ((v % m) + m) % m; }

// Label from the latent velocities: which shape group moves, and for the
// carrier along which axis. Signs never matter (flip-closed classes).
inline Index motion_class(Index carrier_vx, Index carrier_vy, Index distractor_vx, Index distractor_vy) {
  const Index cx = std::abs(carrier_vx), cy = std::abs(carrier_vy);
  const Index dx = std::abs(distractor_vx), dy = std::abs(distractor_vy);
  const bool carrier_moves = cx > 0 || cy > 0;
  const bool distractors_move = dx > 0 || dy > 0;
  if (carrier_moves && distractors_move) return 5;  // global pan
  if (!carrier_moves && distractors_move) return 4;
  if (!carrier_moves) return 0;
  if (cx == 1 && cy == 0) return 1;
  if (cx == 0 && cy == 1) return 2;
  if (cx == 1 && cy == 1) return 3;
  throw ShapeError("motion_class: unsupported carrier velocity");
}

namespace detail {

// Paints one wrapped square into a 3-plane frame buffer.
inline void draw_square(std::vector<double>& frame, Index H, Index W, Index x, Index y, Index size,
                        double r, double g, double b) {
  const Index plane = H * W;
  for (Index dy = 0; dy < size; ++dy)
    for (Index dx = 0; dx < size; ++dx) {
      const Index at = wrap(y + dy, H) * W + wrap(x + dx, W);
      frame[static_cast<std::size_t>(at)] = r;
      frame[static_cast<std::size_t>(plane + at)] = g;
      frame[static_cast<std::size_t>(2 * plane + at)] = b;
    }
}

// Velocities for (carrier, distractors) given the class.
inline void class_velocities(Index cls, Rng& rng, Index* cvx, Index* cvy, Index* dvx, Index* dvy) {
  auto sgn = [&rng]() { return rng.coin() ? Index(1) : Index(-1); };
  *cvx = *cvy = *dvx = *dvy = 0;
  switch (cls) {
    case 0: break;
    case 1: *cvx = sgn(); break;
    case 2: *cvy = sgn(); break;
    case 3: *cvx = sgn(); *cvy = sgn(); break;
    case 4:                                  // distractors move along one shared axis
      if (rng.coin()) *dvx = sgn(); else *dvy = sgn();
      break;
    default: {                               // global pan: everything shares one velocity
      const int axis = static_cast<int>(rng.uniform_int(3));
      if (axis == 0) *cvx = sgn();
      else if (axis == 1) *cvy = sgn();
      else { *cvx = sgn(); *cvy = sgn(); }
      *dvx = *cvx;
      *dvy = *cvy;
      break;
    }
  }
}

constexpr double kShapeBase = 0.08;
constexpr double kBackground = 0.45;

// Triangle wave over one wrap period: 0 -> 1 -> 0, continuous across the seam.
inline double tri_code(Index pos, Index period) {
  const double u = static_cast<double>(wrap(pos, period)) / static_cast<double>(period);
  return 0.2 + 0.8 * (u < 0.5 ? 2.0 * u : 2.0 * (1.0 - u));
}

}  // namespace detail

// Renders one frame (3 planes, [C,H,W] layout) from the latents; pure
// function of (spec, latents, t).
inline std::vector<double> render_frame(const SyntheticVideoSpec& spec, const VideoLatent& lat, Index t) {
  const Index H = spec.height, W = spec.width;
  std::vector<double> frame(static_cast<std::size_t>(3 * H * W));
  const double two_pi = 6.283185307179586476925286766559;
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x) {
      double b = detail::kBackground;
      if (spec.background_amplitude > 0.0)
        b += spec.background_amplitude * 0.5 *
             (std::sin(two_pi * static_cast<double>(x) / static_cast<double>(W)) +
              std::sin(two_pi * static_cast<double>(y) / static_cast<double>(H)));
      for (Index c = 0; c < 3; ++c) frame[static_cast<std::size_t>(c * H * W + y * W + x)] = b;
    }
  const double tau = spec.length > 1 ? static_cast<double>(t) / static_cast<double>(spec.length - 1) : 0.0;
  for (const ShapeLatent& s : lat.shapes) {
    if (s.carrier) continue;  // distractors first, carrier on top
    const Index x = s.x0 + s.vx * t, y = s.y0 + s.vy * t;
    if (spec.position_code) {
      // mixed coordinate so that every unit or diagonal velocity changes it
      const double code = detail::tri_code(2 * x + y, 2 * W);
      detail::draw_square(frame, H, W, x, y, s.size, detail::kShapeBase, detail::kShapeBase, code);
    } else {
      detail::draw_square(frame, H, W, x, y, s.size, s.value, s.value, s.value);
    }
  }
  for (const ShapeLatent& s : lat.shapes) {
    if (!s.carrier) continue;
    const Index x = s.x0 + s.vx * t, y = s.y0 + s.vy * t;
    if (spec.position_code) {
      const double body = detail::tri_code(x, W) + spec.time_code * tau;
      detail::draw_square(frame, H, W, x, y, s.size, body, detail::kShapeBase, detail::kShapeBase);
      // corner badge codes y
      detail::draw_square(frame, H, W, x, y, (s.size + 1) / 2, detail::kShapeBase,
                          detail::tri_code(y, H), detail::kShapeBase);
    } else {
      const double v = s.value + spec.time_code * tau;
      detail::draw_square(frame, H, W, x, y, s.size, v, v, v);
    }
  }
  return frame;
}

inline VideoDataset generate(const SyntheticVideoSpec& spec) {
  spec.validate();
  VideoDataset ds;
  ds.length = spec.length;
  ds.height = spec.height;
  ds.width = spec.width;
  const Index H = spec.height, W = spec.width, L = spec.length;
  const Rng master(spec.seed);

  for (Index vid = 0; vid < spec.num_videos; ++vid) {
    Rng rng = master.derive("video", static_cast<std::uint64_t>(vid));
    VideoLatent lat;
    lat.label = vid % spec.num_classes;  // balanced up to +-1

    Index cvx, cvy, dvx, dvy;
    detail::class_velocities(lat.label, rng, &cvx, &cvy, &dvx, &dvy);

    ShapeLatent carrier;
    carrier.carrier = true;
    carrier.size = spec.carrier_size;
    carrier.value = 0.85;
    carrier.x0 = rng.uniform_int(W);
    carrier.y0 = rng.uniform_int(H);
    carrier.vx = cvx;
    carrier.vy = cvy;
    lat.shapes.push_back(carrier);

    const bool pan = (cvx != 0 || cvy != 0) && (dvx != 0 || dvy != 0);
    for (Index sdx = 1; sdx < spec.num_shapes; ++sdx) {
      ShapeLatent d;
      d.carrier = false;
      d.size = spec.distractor_size;
      d.value = 0.08;
      d.x0 = rng.uniform_int(W);
      d.y0 = rng.uniform_int(H);
      auto sgn = [&rng]() { return rng.coin() ? Index(1) : Index(-1); };
      // a pan is rigid; otherwise distractors share the axis with free signs
      d.vx = pan ? dvx : (dvx == 0 ? 0 : sgn());
      d.vy = pan ? dvy : (dvy == 0 ? 0 : sgn());
      lat.shapes.push_back(d);
    }

    Tensor<float> video(Shape{3, L, H, W});
    Rng noise_rng = rng.derive("noise");
    for (Index t = 0; t < L; ++t) {
      std::vector<double> frame = render_frame(spec, lat, t);  // [3,H,W]
      if (spec.noise > 0.0) {
        for (double& p : frame) {
          p += spec.noise * (2.0 * noise_rng.uniform() - 1.0);
          p = std::min(1.0, std::max(0.0, p));
        }
      }
      for (Index c = 0; c < 3; ++c)
        for (Index i = 0; i < H * W; ++i)
          video[(c * L + t) * H * W + i] = static_cast<float>(frame[static_cast<std::size_t>(c * H * W + i)]);
    }
    ds.videos.push_back(std::move(video));
    ds.labels.push_back(lat.label);
    ds.latents.push_back(std::move(lat));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Samplers
// ---------------------------------------------------------------------------

// TSN-style: split the video into T snippets [floor(s*L/T), floor((s+1)*L/T))
// and pick one frame per snippet.
inline std::vector<Index> sample_snippets(Index video_len, Index t_frames, bool random_mode, Rng* rng) {
  require(t_frames >= 1, "sample_snippets: T must be >= 1");
  require(video_len >= t_frames, "sample_snippets: video length " + std::to_string(video_len) +
                                     " shorter than T=" + std::to_string(t_frames));
  std::vector<Index> out(static_cast<std::size_t>(t_frames));
  for (Index s = 0; s < t_frames; ++s) {
    const Index lo = s * video_len / t_frames;
    const Index hi = (s + 1) * video_len / t_frames;
    out[static_cast<std::size_t>(s)] =
        random_mode ? lo + rng->uniform_int(hi - lo) : lo + (hi - lo - 1) / 2;
  }
  return out;
}

// One frame per snippet at the j-th of n uniformly spread offsets (inference).
inline std::vector<Index> snippet_frames_at(Index video_len, Index t_frames, Index j, Index n) {
  require(n >= 1 && j >= 0 && j < n, "snippet_frames_at: bad sample index");
  std::vector<Index> out(static_cast<std::size_t>(t_frames));
  for (Index s = 0; s < t_frames; ++s) {
    const Index lo = s * video_len / t_frames;
    const Index hi = (s + 1) * video_len / t_frames;
    const Index len = hi - lo;
    out[static_cast<std::size_t>(s)] = (n == 1) ? lo + (len - 1) / 2 : lo + (len - 1) * j / (n - 1);
  }
  return out;
}

inline std::vector<Index> sample_clip(Index video_len, Index t_frames, bool random_mode, Rng* rng) {
  require(t_frames >= 1, "sample_clip: T must be >= 1");
  require(video_len >= t_frames, "sample_clip: video length " + std::to_string(video_len) +
                                     " shorter than T=" + std::to_string(t_frames));
  const Index max_start = video_len - t_frames;
  const Index start = random_mode ? rng->uniform_int(max_start + 1) : max_start / 2;
  std::vector<Index> out(static_cast<std::size_t>(t_frames));
  for (Index i = 0; i < t_frames; ++i) out[static_cast<std::size_t>(i)] = start + i;
  return out;
}

// n clip starts uniformly spaced over [0, L-T] (linspace with floor rounding).
inline std::vector<Index> clip_starts_uniform(Index video_len, Index t_frames, Index n) {
  require(video_len >= t_frames && n >= 1, "clip_starts_uniform: invalid arguments");
  const Index span = video_len - t_frames;
  std::vector<Index> starts(static_cast<std::size_t>(n));
  for (Index j = 0; j < n; ++j)
    starts[static_cast<std::size_t>(j)] = (n == 1) ? span / 2 : span * j / (n - 1);
  return starts;
}

// Gather [C,T,H,W] from a [C,L,H,W] video; indices may exceed L (loop-padding
// for short videos) and are wrapped.
inline Tensor<float> gather_frames(const Tensor<float>& video, const std::vector<Index>& frames) {
  require(video.rank() == 4, "gather_frames expects [C,L,H,W] video");
  const Index C = video.shape()[0], L = video.shape()[1], H = video.shape()[2], W = video.shape()[3];
  const Index T = static_cast<Index>(frames.size());
  Tensor<float> out(Shape{C, T, H, W});
  for (Index c = 0; c < C; ++c)
    for (Index t = 0; t < T; ++t) {
      const Index src = wrap(frames[static_cast<std::size_t>(t)], L);
      std::copy(video.data() + (c * L + src) * H * W, video.data() + (c * L + src + 1) * H * W,
                out.data() + (c * T + t) * H * W);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation: one flip/crop decision applied to every frame of the sample.
// ---------------------------------------------------------------------------

struct AugmentFlags {
  bool flip = true;
  Index crop_h = 0, crop_w = 0;  // 0 = keep full frame
};

inline Tensor<float> augment(const Tensor<float>& clip, const AugmentFlags& flags, Rng& rng) {
  require(clip.rank() == 4, "augment expects [C,T,H,W] sample");
  const Index C = clip.shape()[0], T = clip.shape()[1], H = clip.shape()[2], W = clip.shape()[3];
  const Index ch = flags.crop_h > 0 ? flags.crop_h : H;
  const Index cw = flags.crop_w > 0 ? flags.crop_w : W;
  require(ch <= H && cw <= W, "augment: crop size exceeds frame size");

  const bool do_flip = flags.flip && rng.coin();
  const Index oy = (ch < H) ? rng.uniform_int(H - ch + 1) : 0;
  const Index ox = (cw < W) ? rng.uniform_int(W - cw + 1) : 0;

  Tensor<float> out(Shape{C, T, ch, cw});
  for (Index c = 0; c < C; ++c)
    for (Index t = 0; t < T; ++t)
      for (Index y = 0; y < ch; ++y)
        for (Index x = 0; x < cw; ++x) {
          const Index sx = do_flip ? (ox + cw - 1 - x) : (ox + x);
          out[((c * T + t) * ch + y) * cw + x] =
              clip[((c * T + t) * H + (oy + y)) * W + sx];
        }
  return out;
}

// Mirror the latents the way augment() mirrors pixels; used to confirm that
// flipping never changes the label.
inline VideoLatent flip_latents_horizontal(const VideoLatent& lat, Index width) {
  VideoLatent out = lat;
  for (ShapeLatent& s : out.shapes) {
    s.x0 = wrap(width - s.x0 - s.size, width);
    s.vx = -s.vx;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset binary format: fixed little-endian header, raw f32 tensors, label
// table, then a latents JSON blob.
// ---------------------------------------------------------------------------

namespace detail {

constexpr char kDatasetMagic[8] = {'L', 'G', 'D', 'D', 'A', 'T', '0', '1'};

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  require(static_cast<bool>(is), "unexpected end of file");
  return v;
}

}  // namespace detail

inline void write_dataset(const std::string& path, const VideoDataset& ds, const std::string& latents_json) {
  static_assert(std::endian::native == std::endian::little, "dataset format is little-endian");
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), "cannot open dataset file for writing: " + path);
  os.write(detail::kDatasetMagic, 8);
  detail::write_pod<std::uint32_t>(os, 1);  // version
  detail::write_pod<std::uint8_t>(os, 1);   // dtype f32
  detail::write_pod<std::int64_t>(os, ds.size());
  detail::write_pod<std::int64_t>(os, ds.channels);
  detail::write_pod<std::int64_t>(os, ds.length);
  detail::write_pod<std::int64_t>(os, ds.height);
  detail::write_pod<std::int64_t>(os, ds.width);
  for (const Tensor<float>& v : ds.videos)
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
  for (Index l : ds.labels) detail::write_pod<std::int64_t>(os, l);
  detail::write_pod<std::int64_t>(os, static_cast<std::int64_t>(latents_json.size()));
  os.write(latents_json.data(), static_cast<std::streamsize>(latents_json.size()));
  require(static_cast<bool>(os), "failed writing dataset file: " + path);
}

inline VideoDataset read_dataset(const std::string& path, std::string* latents_json = nullptr) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), "cannot open dataset file: " + path);
  char magic[8];
  is.read(magic, 8);
  require(static_cast<bool>(is) && std::equal(magic, magic + 8, detail::kDatasetMagic),
          "not a dataset file: " + path);
  const auto version = detail::read_pod<std::uint32_t>(is);
  require(version == 1, "unsupported dataset version " + std::to_string(version));
  const auto dtype = detail::read_pod<std::uint8_t>(is);
  require(dtype == 1, "unsupported dataset dtype");
  VideoDataset ds;
  const Index n = detail::read_pod<std::int64_t>(is);
  ds.channels = detail::read_pod<std::int64_t>(is);
  ds.length = detail::read_pod<std::int64_t>(is);
  ds.height = detail::read_pod<std::int64_t>(is);
  ds.width = detail::read_pod<std::int64_t>(is);
  require(n >= 1 && ds.channels >= 1 && ds.length >= 1 && ds.height >= 1 && ds.width >= 1,
          "corrupt dataset header");
  for (Index i = 0; i < n; ++i) {
    Tensor<float> v(Shape{ds.channels, ds.length, ds.height, ds.width});
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
    require(static_cast<bool>(is), "truncated dataset file");
    ds.videos.push_back(std::move(v));
  }
  for (Index i = 0; i < n; ++i) ds.labels.push_back(detail::read_pod<std::int64_t>(is));
  const Index json_len = detail::read_pod<std::int64_t>(is);
  if (latents_json) {
    latents_json->resize(static_cast<std::size_t>(json_len));
    if (json_len > 0) is.read(latents_json->data(), json_len);
    require(static_cast<bool>(is), "truncated dataset file");
  }
  return ds;
}

}  // namespace lgd
