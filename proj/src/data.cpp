#include "mgmf/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mgmf/blob.hpp"

namespace mgmf {

namespace {

using nlohmann::json;

[[noreturn]] void located(std::size_t line, const std::string& id,
                          const std::string& msg) {
  std::string where = "manifest line " + std::to_string(line);
  if (!id.empty()) where += " (id " + id + ")";
  throw DataError(where + ": " + msg);
}

std::vector<int> read_tokens(const json& j, const char* field, std::size_t line,
                             const std::string& id) {
  if (!j.contains(field) || !j[field].is_array())
    located(line, id, std::string(field) + " must be an array of token ids");
  std::vector<int> out;
  for (const auto& v : j[field]) {
    if (!v.is_number_integer()) located(line, id, std::string(field) + " has a non-integer");
    out.push_back(v.get<int>());
  }
  return out;
}

void check_tokens(const std::vector<int>& toks, const char* field, std::size_t maxlen,
                  std::size_t vocab, std::size_t line, const std::string& id) {
  if (toks.empty() || toks.size() > maxlen)
    located(line, id,
            std::string(field) + " length " + std::to_string(toks.size()) +
                " outside [1, " + std::to_string(maxlen) + "]");
  for (int t : toks) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocab)
      located(line, id,
              std::string(field) + " token " + std::to_string(t) +
                  " outside vocabulary of " + std::to_string(vocab));
  }
}

json image_to_json(const ImageSource& src) {
  json j;
  switch (src.kind) {
    case ImageSource::Kind::BlobPath:
      j["kind"] = "blob";
      j["path"] = src.path;
      break;
    case ImageSource::Kind::Features:
      j["kind"] = "features";
      j["path"] = src.path;
      break;
    case ImageSource::Kind::Synthetic: {
      j["kind"] = "synthetic";
      j["height"] = src.synthetic.height;
      j["width"] = src.synthetic.width;
      j["channels"] = src.synthetic.channels;
      j["background"] = src.synthetic.background;
      json blocks = json::array();
      for (const PatternBlock& b : src.synthetic.blocks) {
        blocks.push_back({{"x", b.x},
                          {"y", b.y},
                          {"w", b.w},
                          {"h", b.h},
                          {"pattern", b.pattern},
                          {"value", b.value},
                          {"amplitude", b.amplitude}});
      }
      j["blocks"] = std::move(blocks);
      break;
    }
  }
  return j;
}

ImageSource image_from_json(const json& j, std::size_t line, const std::string& id) {
  if (!j.is_object() || !j.contains("kind"))
    located(line, id, "image must be an object with a kind");
  ImageSource src;
  const std::string kind = j["kind"].get<std::string>();
  if (kind == "blob" || kind == "features") {
    src.kind = kind == "blob" ? ImageSource::Kind::BlobPath : ImageSource::Kind::Features;
    if (!j.contains("path") || !j["path"].is_string())
      located(line, id, "image of kind " + kind + " needs a path");
    src.path = j["path"].get<std::string>();
  } else if (kind == "synthetic") {
    src.kind = ImageSource::Kind::Synthetic;
    SyntheticImage& s = src.synthetic;
    try {
      s.height = j.at("height").get<std::size_t>();
      s.width = j.at("width").get<std::size_t>();
      s.channels = j.value("channels", std::size_t{1});
      s.background = j.at("background").get<double>();
      for (const auto& bj : j.value("blocks", json::array())) {
        PatternBlock b;
        b.x = bj.at("x").get<double>();
        b.y = bj.at("y").get<double>();
        b.w = bj.at("w").get<double>();
        b.h = bj.at("h").get<double>();
        b.pattern = bj.value("pattern", std::string("solid"));
        b.value = bj.at("value").get<double>();
        b.amplitude = bj.value("amplitude", 0.0);
        s.blocks.push_back(std::move(b));
      }
    } catch (const json::exception& e) {
      located(line, id, std::string("malformed synthetic image: ") + e.what());
    }
    if (s.height == 0 || s.width == 0 || s.channels == 0)
      located(line, id, "synthetic image needs positive dimensions");
  } else {
    located(line, id, "unknown image kind: " + kind);
  }
  return src;
}

// Image pixel bounds for box validation; Features sources have none.
bool image_bounds(const MemeSample& s, const std::filesystem::path& base_dir,
                  std::size_t line, std::size_t* h, std::size_t* w) {
  switch (s.image.kind) {
    case ImageSource::Kind::Synthetic:
      *h = s.image.synthetic.height;
      *w = s.image.synthetic.width;
      return true;
    case ImageSource::Kind::BlobPath: {
      const auto full = base_dir / s.image.path;
      BlobTensor blob;
      try {
        blob = read_blob_file(full);
      } catch (const DataError& e) {
        located(line, s.id, std::string("image blob ") + s.image.path + ": " + e.what());
      }
      if (blob.shape.size() != 3)
        located(line, s.id,
                "image blob must be rank 3 (height x width x channels), got " +
                    shape_str(blob.shape));
      *h = blob.shape[0];
      *w = blob.shape[1];
      return true;
    }
    case ImageSource::Kind::Features:
      return false;
  }
  return false;
}

}  // namespace

std::vector<MemeSample> load_manifest(const std::filesystem::path& path,
                                      const DataLimits& limits) {
  std::ifstream is(path);
  if (!is) throw DataError("manifest: cannot open " + path.string());
  const std::filesystem::path base_dir = path.parent_path();

  std::vector<MemeSample> out;
  std::string linebuf;
  std::size_t line = 0;
  while (std::getline(is, linebuf)) {
    ++line;
    if (linebuf.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(linebuf);
    } catch (const json::exception& e) {
      located(line, "", std::string("parse error: ") + e.what());
    }
    MemeSample s;
    if (!j.contains("id") || !j["id"].is_string()) located(line, "", "missing string id");
    s.id = j["id"].get<std::string>();

    s.text_tokens = read_tokens(j, "text", line, s.id);
    s.source_tokens = read_tokens(j, "source", line, s.id);
    s.target_tokens = read_tokens(j, "target", line, s.id);
    check_tokens(s.text_tokens, "text", limits.max_text, limits.vocab, line, s.id);
    check_tokens(s.source_tokens, "source", limits.max_source, limits.vocab, line, s.id);
    check_tokens(s.target_tokens, "target", limits.max_target, limits.vocab, line, s.id);

    if (!j.contains("image")) located(line, s.id, "missing image");
    s.image = image_from_json(j["image"], line, s.id);

    for (const auto& rj : j.value("regions", json::array())) {
      if (!rj.is_array() || rj.size() != 4)
        located(line, s.id, "each region must be [x, y, w, h]");
      Box b{rj[0].get<double>(), rj[1].get<double>(), rj[2].get<double>(),
            rj[3].get<double>()};
      s.regions.push_back(b);
    }

    if (!j.contains("labels") || !j["labels"].is_object())
      located(line, s.id, "missing labels object");
    for (std::size_t t = 0; t < 4; ++t) {
      const char* task = kTaskNames[t];
      if (!j["labels"].contains(task))
        located(line, s.id, std::string("missing label for task ") + task);
      const int lab = j["labels"][task].get<int>();
      if (lab < 0 || lab >= limits.class_counts[t])
        located(line, s.id,
                std::string("label ") + std::to_string(lab) + " for task " + task +
                    " outside [0, " + std::to_string(limits.class_counts[t]) + ")");
      s.labels[t] = lab;
    }

    // Box invariants. Bounds need pixel dimensions, which Features sources
    // do not have; those must carry their regions inside the feature rows.
    std::size_t ih = 0, iw = 0;
    const bool has_bounds = image_bounds(s, base_dir, line, &ih, &iw);
    if (!has_bounds && !s.regions.empty())
      located(line, s.id, "a features-backed sample must not list pixel regions");
    for (const Box& b : s.regions) {
      if (b.w <= 0 || b.h <= 0)
        located(line, s.id, "region with non-positive width or height");
      if (b.x < 0 || b.y < 0 || b.x + b.w > static_cast<double>(iw) ||
          b.y + b.h > static_cast<double>(ih))
        located(line, s.id,
                "region (" + std::to_string(b.x) + ", " + std::to_string(b.y) + ", " +
                    std::to_string(b.w) + ", " + std::to_string(b.h) +
                    ") outside image " + std::to_string(iw) + "x" + std::to_string(ih));
    }
    out.push_back(std::move(s));
  }
  return out;
}

void write_manifest(const std::filesystem::path& path,
                    const std::vector<MemeSample>& samples) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("manifest: cannot open for writing " + path.string());
  for (const MemeSample& s : samples) {
    json j;
    j["id"] = s.id;
    j["text"] = s.text_tokens;
    j["source"] = s.source_tokens;
    j["target"] = s.target_tokens;
    j["image"] = image_to_json(s.image);
    json regions = json::array();
    for (const Box& b : s.regions) regions.push_back({b.x, b.y, b.w, b.h});
    j["regions"] = std::move(regions);
    j["labels"] = {{"mr", s.labels[0]},
                   {"sa", s.labels[1]},
                   {"id", s.labels[2]},
                   {"od", s.labels[3]}};
    os << j.dump() << "\n";
  }
  if (!os) throw DataError("manifest: write failed " + path.string());
}

ImageGrid paint_synthetic(const SyntheticImage& spec) {
  ImageGrid img;
  img.height = spec.height;
  img.width = spec.width;
  img.channels = spec.channels;
  img.pixels.assign(spec.height * spec.width * spec.channels, spec.background);
  for (const PatternBlock& b : spec.blocks) {
    const auto r0 = static_cast<std::size_t>(std::max(0.0, b.y));
    const auto c0 = static_cast<std::size_t>(std::max(0.0, b.x));
    const auto r1 = std::min(spec.height, static_cast<std::size_t>(std::ceil(b.y + b.h)));
    const auto c1 = std::min(spec.width, static_cast<std::size_t>(std::ceil(b.x + b.w)));
    for (std::size_t r = r0; r < r1; ++r) {
      for (std::size_t c = c0; c < c1; ++c) {
        double v = b.value;
        const std::size_t lr = r - r0, lc = c - c0;
        if (b.pattern == "solid") {
          // keep v
        } else if (b.pattern == "h2") {
          v += (lr % 2 == 0 ? b.amplitude : -b.amplitude);
        } else if (b.pattern == "v2") {
          v += (lc % 2 == 0 ? b.amplitude : -b.amplitude);
        } else if (b.pattern == "d2") {
          v += ((lr + lc) % 2 == 0 ? b.amplitude : -b.amplitude);
        } else if (b.pattern == "h4") {
          v += (lr % 4 < 2 ? b.amplitude : -b.amplitude);
        } else {
          throw DataError("synthetic image: unknown block pattern " + b.pattern);
        }
        for (std::size_t ch = 0; ch < spec.channels; ++ch)
          img.at(r, c, ch) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return img;
}

ImageGrid materialize_image(const MemeSample& sample,
                            const std::filesystem::path& base_dir) {
  switch (sample.image.kind) {
    case ImageSource::Kind::Synthetic:
      return paint_synthetic(sample.image.synthetic);
    case ImageSource::Kind::BlobPath: {
      BlobTensor blob = read_blob_file(base_dir / sample.image.path);
      if (blob.shape.size() != 3)
        throw DataError("sample " + sample.id + ": image blob must be rank 3, got " +
                        shape_str(blob.shape));
      ImageGrid img;
      img.height = blob.shape[0];
      img.width = blob.shape[1];
      img.channels = blob.shape[2];
      img.pixels = std::move(blob.data);
      for (double v : img.pixels) {
        if (!(v >= -1e-6 && v <= 1.0 + 1e-6))
          throw DataError("sample " + sample.id + ": image value " + std::to_string(v) +
                          " outside [0, 1]");
      }
      return img;
    }
    case ImageSource::Kind::Features:
      throw ContractError("sample " + sample.id +
                          " is features-backed and has no pixel form");
  }
  throw ContractError("unreachable image kind");
}

ImageGrid resample_box(const ImageGrid& img, const Box& box, std::size_t side,
                       bool bilinear) {
  if (side == 0) throw ConfigError("resample_box: zero output side");
  if (box.w <= 0 || box.h <= 0)
    throw DataError("resample_box: degenerate box");
  if (box.x < 0 || box.y < 0 ||
      box.x + box.w > static_cast<double>(img.width) ||
      box.y + box.h > static_cast<double>(img.height))
    throw DataError("resample_box: box exceeds image bounds");
  ImageGrid out;
  out.height = side;
  out.width = side;
  out.channels = img.channels;
  out.pixels.assign(side * side * img.channels, 0.0);
  const double sx = box.w / static_cast<double>(side);
  const double sy = box.h / static_cast<double>(side);
  for (std::size_t r = 0; r < side; ++r) {
    // output pixel center mapped into source coordinates
    const double fy = box.y + (static_cast<double>(r) + 0.5) * sy - 0.5;
    for (std::size_t c = 0; c < side; ++c) {
      const double fx = box.x + (static_cast<double>(c) + 0.5) * sx - 0.5;
      if (bilinear) {
        const double cy = std::clamp(fy, 0.0, static_cast<double>(img.height - 1));
        const double cx = std::clamp(fx, 0.0, static_cast<double>(img.width - 1));
        const std::size_t y0 = static_cast<std::size_t>(cy);
        const std::size_t x0 = static_cast<std::size_t>(cx);
        const std::size_t y1 = std::min(y0 + 1, img.height - 1);
        const std::size_t x1 = std::min(x0 + 1, img.width - 1);
        const double wy = cy - static_cast<double>(y0);
        const double wx = cx - static_cast<double>(x0);
        for (std::size_t ch = 0; ch < img.channels; ++ch) {
          const double top = img.at(y0, x0, ch) * (1 - wx) + img.at(y0, x1, ch) * wx;
          const double bot = img.at(y1, x0, ch) * (1 - wx) + img.at(y1, x1, ch) * wx;
          out.at(r, c, ch) = top * (1 - wy) + bot * wy;
        }
      } else {
        const auto yn = static_cast<std::size_t>(std::clamp(
            std::round(fy), 0.0, static_cast<double>(img.height - 1)));
        const auto xn = static_cast<std::size_t>(std::clamp(
            std::round(fx), 0.0, static_cast<double>(img.width - 1)));
        for (std::size_t ch = 0; ch < img.channels; ++ch)
          out.at(r, c, ch) = img.at(yn, xn, ch);
      }
    }
  }
  return out;
}

}  // namespace mgmf
