#include "tsnet/toy.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include <opencv2/imgproc.hpp>

#include "tsnet/errors.hpp"

namespace tsnet::toy {
namespace {

constexpr double kPi = std::numbers::pi;

struct Appearance {
  cv::Scalar background, skin, hair, lips, clothes, trousers;
  double face_width = 1.0;   // relative x scale of the face template
  double size = 1.0;         // overall scale
};

struct Motion {
  double ax, ay, wx, wy, px, py;  // head translation (fraction of frame), angular speeds, phases
  double rot_amp, rot_w;
  double mouth_w, mouth_phase;
  double limb_w, limb_phase;
};

cv::Scalar random_colour(std::mt19937_64& rng, int lo, int hi) {
  std::uniform_int_distribution<int> c(lo, hi);
  return cv::Scalar(c(rng), c(rng), c(rng));
}

Appearance appearance_of(int subject) {
  std::mt19937_64 rng(dataio::mix_seed(0x70A5ull, static_cast<std::uint64_t>(subject)));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Appearance a;
  a.background = random_colour(rng, 20, 120);
  a.skin = random_colour(rng, 140, 250);
  a.hair = random_colour(rng, 0, 90);
  a.lips = random_colour(rng, 90, 230);
  a.clothes = random_colour(rng, 60, 255);
  a.trousers = random_colour(rng, 30, 200);
  a.face_width = 0.8 + 0.3 * u(rng);
  a.size = 0.9 + 0.2 * u(rng);
  return a;
}

Motion motion_of(std::uint64_t seed) {
  std::mt19937_64 rng(dataio::mix_seed(seed, 0x3071ull));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Motion m;
  m.ax = 0.04 + 0.06 * u(rng);
  m.ay = 0.02 + 0.05 * u(rng);
  m.wx = 0.2 + 0.4 * u(rng);
  m.wy = 0.2 + 0.4 * u(rng);
  m.px = 2 * kPi * u(rng);
  m.py = 2 * kPi * u(rng);
  m.rot_amp = 0.05 + 0.15 * u(rng);
  m.rot_w = 0.1 + 0.3 * u(rng);
  m.mouth_w = 0.3 + 0.6 * u(rng);
  m.mouth_phase = 2 * kPi * u(rng);
  m.limb_w = 0.3 + 0.5 * u(rng);
  m.limb_phase = 2 * kPi * u(rng);
  return m;
}

/// 68 landmarks in face units: x in [-1, 1], chin at y = 1, brows near y = -0.6.
std::vector<Point2> face_template(double width_scale, double mouth_open, double eye_open) {
  std::vector<Point2> p;
  for (int i = 0; i <= 16; ++i) {
    const double t = kPi * i / 16.0;
    p.push_back({-std::cos(t), -0.2 + 1.2 * std::sin(t)});
  }
  for (int side = 0; side < 2; ++side) {
    const double x0 = side == 0 ? -0.75 : 0.15;
    for (int j = 0; j < 5; ++j) p.push_back({x0 + 0.15 * j, -0.55 - 0.1 * std::sin(kPi * j / 4.0)});
  }
  for (int j = 0; j < 4; ++j) p.push_back({0.0, -0.35 + 0.5 * j / 3.0});
  for (int j = 0; j < 5; ++j) p.push_back({-0.2 + 0.1 * j, 0.25 + (j == 2 ? 0.05 : 0.0)});
  for (double cx : {-0.42, 0.42}) {
    for (double deg : {180.0, 120.0, 60.0, 0.0, -60.0, -120.0}) {
      const double a = deg * kPi / 180.0;
      p.push_back({cx + 0.18 * std::cos(a), -0.3 - 0.08 * eye_open * std::sin(a)});
    }
  }
  const double outer_ry = 0.1 + 0.15 * mouth_open;
  for (int j = 0; j < 12; ++j) {
    const double a = (180.0 - 30.0 * j) * kPi / 180.0;
    p.push_back({0.4 * std::cos(a), 0.62 - outer_ry * std::sin(a)});
  }
  const double inner_ry = 0.01 + 0.12 * mouth_open;
  for (int j = 0; j < 8; ++j) {
    const double a = (180.0 - 45.0 * j) * kPi / 180.0;
    p.push_back({0.25 * std::cos(a), 0.62 - inner_ry * std::sin(a)});
  }
  for (auto& q : p) q.x *= width_scale;
  return p;
}

Point2 place(const Point2& q, double cx, double cy, double scale, double rot) {
  const double c = std::cos(rot), s = std::sin(rot);
  return {cx + scale * (c * q.x - s * q.y), cy + scale * (s * q.x + c * q.y)};
}

KeypointSet face_keypoints(const ToyOptions& o, const Appearance& a, const Motion& m, int t) {
  const double W = o.width, H = o.height;
  const double cx = W / 2.0 + m.ax * W * std::sin(m.wx * t + m.px);
  const double cy = H / 2.0 + m.ay * H * std::sin(m.wy * t + m.py);
  const double rot = m.rot_amp * std::sin(m.rot_w * t);
  const double scale = 0.3 * std::min(W, H) * a.size;
  const double mouth = 0.5 + 0.5 * std::sin(m.mouth_w * t + m.mouth_phase);
  const double eyes = 0.6 + 0.4 * std::cos(0.7 * m.mouth_w * t);
  KeypointSet k;
  k.schema = Schema::kFace68;
  for (const auto& q : face_template(a.face_width, mouth, eyes)) k.points.push_back(place(q, cx, cy, scale, rot));
  k.visible.assign(k.points.size(), true);
  return k;
}

KeypointSet body_keypoints(const ToyOptions& o, const Appearance& a, const Motion& m, int t) {
  const double W = o.width, H = o.height;
  const double unit = 0.22 * H * a.size;  // figure spans about 4.4 units vertically
  const double cx = W / 2.0 + m.ax * W * std::sin(m.wx * t + m.px);
  const double hip_y = H * 0.6 + 0.3 * m.ay * H * std::sin(m.wy * t + m.py);
  const double swing = 0.6 * std::sin(m.limb_w * t + m.limb_phase);
  const double lift = 0.5 + 0.5 * std::sin(0.8 * m.limb_w * t);
  auto at = [&](double x, double y) { return Point2{cx + unit * x, hip_y + unit * y}; };
  auto limb = [&](Point2 from, double angle, double len) {
    return Point2{from.x + unit * len * std::sin(angle), from.y + unit * len * std::cos(angle)};
  };

  std::vector<Point2> b(25);
  b[8] = at(0, 0);
  b[1] = at(0, -1.6);
  b[0] = at(0, -2.1);
  b[2] = at(-0.45, -1.55);
  b[5] = at(0.45, -1.55);
  b[3] = limb(b[2], -0.3 - swing, 0.7);
  b[4] = limb(b[3], -0.3 - swing - 1.2 * lift, 0.6);
  b[6] = limb(b[5], 0.3 + swing, 0.7);
  b[7] = limb(b[6], 0.3 + swing + 1.2 * (1 - lift), 0.6);
  b[9] = at(-0.25, 0.05);
  b[12] = at(0.25, 0.05);
  b[10] = limb(b[9], 0.4 * swing, 0.9);
  b[11] = limb(b[10], 0.2 * swing, 0.9);
  b[13] = limb(b[12], -0.4 * swing, 0.9);
  b[14] = limb(b[13], -0.2 * swing, 0.9);
  b[15] = at(-0.1, -2.2);
  b[16] = at(0.1, -2.2);
  b[17] = at(-0.22, -2.1);
  b[18] = at(0.22, -2.1);
  b[22] = {b[11].x - 0.15 * unit, b[11].y + 0.05 * unit};
  b[23] = {b[11].x - 0.08 * unit, b[11].y + 0.08 * unit};
  b[24] = {b[11].x + 0.05 * unit, b[11].y};
  b[19] = {b[14].x + 0.15 * unit, b[14].y + 0.05 * unit};
  b[20] = {b[14].x + 0.08 * unit, b[14].y + 0.08 * unit};
  b[21] = {b[14].x - 0.05 * unit, b[14].y};

  KeypointSet k;
  k.schema = Schema::kBody;
  k.points = b;
  const double mouth = 0.5 + 0.5 * std::sin(m.mouth_w * t + m.mouth_phase);
  const auto face = face_template(a.face_width, mouth, 1.0);
  const Point2 head = at(0, -2.15);
  for (const auto& q : face) k.points.push_back(place(q, head.x, head.y, 0.3 * unit, 0.0));
  k.points.push_back(place({-0.42, -0.3}, head.x, head.y, 0.3 * unit, 0.0));
  k.points.push_back(place({0.42, -0.3}, head.x, head.y, 0.3 * unit, 0.0));

  // Left hand first, then right; five fingers of four points fanning from the wrist.
  for (const auto& [wrist, elbow] : {std::pair{b[7], b[6]}, std::pair{b[4], b[3]}}) {
    const double dir = std::atan2(wrist.x - elbow.x, wrist.y - elbow.y);
    k.points.push_back(wrist);
    for (int f = 0; f < 5; ++f) {
      const double angle = dir + (f - 2) * 0.35;
      for (int j = 1; j <= 4; ++j) k.points.push_back(limb(wrist, angle, 0.07 * j));
    }
  }
  k.visible.assign(k.points.size(), true);
  return k;
}

cv::Point2f cvp(const Point2& p) { return {static_cast<float>(p.x), static_cast<float>(p.y)}; }

std::vector<cv::Point> poly(const KeypointSet& k, int first, int last) {
  std::vector<cv::Point> out;
  for (int i = first; i <= last; ++i) {
    out.emplace_back(static_cast<int>(std::lround(k.points[i].x)), static_cast<int>(std::lround(k.points[i].y)));
  }
  return out;
}

void draw_face(cv::Mat& img, const KeypointSet& k, int offset, const Appearance& a, double unit_px) {
  auto pt = [&](int i) { return k.points[offset + i]; };
  const Point2 chin = pt(8);
  const Point2 left = pt(0), right = pt(16);
  const Point2 centre{(left.x + right.x) / 2.0, (left.y + right.y) / 2.0};
  const double half_w = std::hypot(right.x - left.x, right.y - left.y) / 2.0;
  const double half_h = std::hypot(chin.x - centre.x, chin.y - centre.y);
  const double angle = std::atan2(right.y - left.y, right.x - left.x) * 180.0 / kPi;
  const auto thick = std::max(1, static_cast<int>(std::lround(unit_px * 0.06)));
  cv::RotatedRect hair(cvp({centre.x, centre.y - 0.3 * half_h}), cv::Size2f(2.3f * half_w, 2.4f * half_h),
                       static_cast<float>(angle));
  cv::ellipse(img, hair, a.hair, cv::FILLED, cv::LINE_AA);
  cv::RotatedRect head(cvp(centre), cv::Size2f(2.0f * half_w, 2.0f * half_h), static_cast<float>(angle));
  cv::ellipse(img, head, a.skin, cv::FILLED, cv::LINE_AA);
  const cv::Scalar dark(20, 20, 20);
  cv::fillPoly(img, std::vector<std::vector<cv::Point>>{poly(k, offset + 36, offset + 41)}, dark, cv::LINE_AA);
  cv::fillPoly(img, std::vector<std::vector<cv::Point>>{poly(k, offset + 42, offset + 47)}, dark, cv::LINE_AA);
  cv::polylines(img, poly(k, offset + 17, offset + 21), false, a.hair, thick, cv::LINE_AA);
  cv::polylines(img, poly(k, offset + 22, offset + 26), false, a.hair, thick, cv::LINE_AA);
  cv::polylines(img, poly(k, offset + 27, offset + 30), false, a.skin * 0.7, thick, cv::LINE_AA);
  cv::polylines(img, poly(k, offset + 31, offset + 35), false, a.skin * 0.7, thick, cv::LINE_AA);
  cv::fillPoly(img, std::vector<std::vector<cv::Point>>{poly(k, offset + 48, offset + 59)}, a.lips, cv::LINE_AA);
  cv::fillPoly(img, std::vector<std::vector<cv::Point>>{poly(k, offset + 60, offset + 67)}, dark, cv::LINE_AA);
}

void draw_body(cv::Mat& img, const KeypointSet& k, const Appearance& a, double unit_px) {
  const auto thick = std::max(1, static_cast<int>(std::lround(unit_px * 0.35)));
  auto line = [&](int i, int j, const cv::Scalar& c, int w) {
    cv::line(img, cvp(k.points[i]), cvp(k.points[j]), c, w, cv::LINE_AA);
  };
  for (auto [i, j] : {std::pair{9, 10}, {10, 11}, {12, 13}, {13, 14}}) line(i, j, a.trousers, thick);
  for (auto [i, j] : {std::pair{11, 22}, {14, 19}}) line(i, j, a.trousers * 0.5, std::max(1, thick / 2));
  std::vector<cv::Point> torso{cvp(k.points[2]), cvp(k.points[5]), cvp(k.points[12]), cvp(k.points[9])};
  cv::fillConvexPoly(img, torso, a.clothes, cv::LINE_AA);
  for (auto [i, j] : {std::pair{2, 3}, {3, 4}, {5, 6}, {6, 7}}) line(i, j, a.clothes, thick);
  line(1, 0, a.skin, thick);
  for (int h : {95, 116}) {
    for (int f = 0; f < 5; ++f) {
      int prev = h;
      for (int j = 1; j <= 4; ++j) {
        const int idx = h + 1 + f * 4 + (j - 1);
        line(prev, idx, a.skin, 1);
        prev = idx;
      }
    }
  }
  draw_face(img, k, 25, a, unit_px * 0.3);
}

}  // namespace

KeypointSet toy_keypoints(const ToyOptions& options, int subject, std::uint64_t motion_seed, int t) {
  const auto a = appearance_of(subject);
  const auto m = motion_of(motion_seed);
  auto k = options.schema == Schema::kFace68 ? face_keypoints(options, a, m, t) : body_keypoints(options, a, m, t);
  k.clamp_to(options.width, options.height);
  for (auto& p : k.points) {
    p.x = quantize_coordinate(p.x);
    p.y = quantize_coordinate(p.y);
  }
  return k;
}

torch::Tensor render_toy_frame(const ToyOptions& options, int subject, const KeypointSet& kps) {
  const auto a = appearance_of(subject);
  cv::Mat img(options.height, options.width, CV_8UC3, a.background);
  const double unit = options.schema == Schema::kFace68 ? 0.3 * std::min(options.height, options.width) * a.size
                                                        : 0.22 * options.height * a.size;
  if (kps.schema == Schema::kFace68) {
    draw_face(img, kps, 0, a, unit);
  } else {
    draw_body(img, kps, a, unit);
  }
  cv::Mat f;
  img.convertTo(f, CV_32FC3, 1.0 / 255.0);
  auto t = torch::from_blob(f.data, {f.rows, f.cols, 3}, torch::kFloat32);
  return t.permute({2, 0, 1}).contiguous().clone();
}

dataio::VideoClip make_toy_clip(const ToyOptions& options, int subject, std::uint64_t motion_seed,
                                const dataio::RasterStyle& style, std::string clip_id) {
  if (options.frames < 1 || options.height < 8 || options.width < 8) {
    throw ConfigError("toy clips need at least one frame of at least 8x8 pixels");
  }
  dataio::VideoClip clip;
  clip.clip_id = clip_id.empty() ? "toy" + std::to_string(subject) : std::move(clip_id);
  clip.subject_id = "s" + std::to_string(subject);
  for (int t = 0; t < options.frames; ++t) {
    const auto kps = toy_keypoints(options, subject, motion_seed, t);
    clip.frames.push_back(render_toy_frame(options, subject, kps));
    if (options.drop_every > 0 && t % options.drop_every == options.drop_every - 1) {
      clip.masks.emplace_back(std::nullopt);
    } else {
      clip.masks.emplace_back(dataio::rasterize_mask(kps, options.height, options.width, style));
    }
  }
  return clip;
}

void write_toy_dataset(const std::filesystem::path& root, const ToyOptions& options, int subjects,
                       int clips_per_subject, std::uint64_t seed) {
  dataio::Manifest manifest;
  manifest.schema = options.schema;
  dataio::RasterStyle style;
  for (int s = 0; s < subjects; ++s) {
    for (int c = 0; c < clips_per_subject; ++c) {
      const std::string id = "s" + std::to_string(s) + "_c" + std::to_string(c);
      const auto clip = make_toy_clip(options, s, dataio::mix_seed(seed, static_cast<std::uint64_t>(s * 1000 + c)),
                                      style, id);
      dataio::save_clip(root / id, clip);
      manifest.clips.push_back({clip.clip_id, clip.subject_id});
    }
  }
  dataio::write_manifest(root, manifest);
}

}  // namespace tsnet::toy
