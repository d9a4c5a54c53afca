#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <opencv2/dnn.hpp>

#include "lesion/embedding.hpp"
#include "lesion/error.hpp"
#include "lesion/rng.hpp"

namespace lesion {

/// Pixel mapping applied before the network: `symmetric` is v -> 2v - 1,
/// `unit_interval` passes [0, 1] through.
enum class Normalization { unit_interval, symmetric };

constexpr std::string_view normalization_name(Normalization n) {
  return n == Normalization::symmetric ? "symmetric" : "unit_interval";
}

inline Normalization parse_normalization(std::string_view s) {
  if (s == "symmetric") return Normalization::symmetric;
  if (s == "unit_interval") return Normalization::unit_interval;
  throw Error(ErrorCode::InvalidConfig, "normalization must be unit_interval or symmetric, got '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Just enough of the protobuf wire format to read the declared graph inputs
// and outputs of an ONNX ModelProto.

struct OnnxValueInfo {
  std::string name;
  std::vector<std::int64_t> dims;  // -1 for symbolic or absent dimensions
};

struct OnnxSignature {
  std::vector<OnnxValueInfo> inputs;  // initializers already removed
  std::vector<OnnxValueInfo> outputs;
};

namespace onnx_wire {

class Reader {
 public:
  explicit Reader(std::string_view buf) : buf_(buf) {}

  bool done() const { return pos_ >= buf_.size(); }

  std::uint64_t varint() {
    std::uint64_t v = 0;
    for (int shift = 0; shift < 64; shift += 7) {
      if (pos_ >= buf_.size()) throw Error(ErrorCode::ModelLoadError, "truncated varint in model file");
      const auto b = static_cast<unsigned char>(buf_[pos_++]);
      v |= static_cast<std::uint64_t>(b & 0x7f) << shift;
      if (!(b & 0x80)) return v;
    }
    throw Error(ErrorCode::ModelLoadError, "overlong varint in model file");
  }

  std::string_view bytes(std::size_t n) {
    if (n > buf_.size() - pos_) throw Error(ErrorCode::ModelLoadError, "truncated field in model file");
    auto out = buf_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  /// Reads one field: returns (field number, wire type) and fills either
  /// `value` (varint) or `payload` (length-delimited); other types are skipped.
  std::pair<std::uint32_t, int> field(std::uint64_t& value, std::string_view& payload) {
    const auto key = varint();
    const auto number = static_cast<std::uint32_t>(key >> 3);
    const int type = static_cast<int>(key & 7);
    switch (type) {
      case 0: value = varint(); break;
      case 1: bytes(8); break;
      case 2: payload = bytes(varint()); break;
      case 5: bytes(4); break;
      default: throw Error(ErrorCode::ModelLoadError, "unsupported protobuf wire type " + std::to_string(type));
    }
    return {number, type};
  }

 private:
  std::string_view buf_;
  std::size_t pos_ = 0;
};

template <typename Fn>
void for_each_field(std::string_view msg, Fn&& fn) {
  Reader r(msg);
  while (!r.done()) {
    std::uint64_t value = 0;
    std::string_view payload;
    const auto [number, type] = r.field(value, payload);
    fn(number, type, value, payload);
  }
}

inline OnnxValueInfo parse_value_info(std::string_view msg) {
  OnnxValueInfo info;
  for_each_field(msg, [&](std::uint32_t n, int t, std::uint64_t, std::string_view p) {
    if (n == 1 && t == 2) info.name = std::string(p);
    if (n != 2 || t != 2) return;
    for_each_field(p, [&](std::uint32_t n2, int t2, std::uint64_t, std::string_view tensor_type) {  // TypeProto
      if (n2 != 1 || t2 != 2) return;
      for_each_field(tensor_type, [&](std::uint32_t n3, int t3, std::uint64_t, std::string_view shape) {
        if (n3 != 2 || t3 != 2) return;
        for_each_field(shape, [&](std::uint32_t n4, int t4, std::uint64_t, std::string_view dim) {
          if (n4 != 1 || t4 != 2) return;
          std::int64_t d = -1;
          for_each_field(dim, [&](std::uint32_t n5, int t5, std::uint64_t v, std::string_view) {
            if (n5 == 1 && t5 == 0) d = static_cast<std::int64_t>(v);
          });
          info.dims.push_back(d);
        });
      });
    });
  });
  return info;
}

}  // namespace onnx_wire

inline OnnxSignature read_onnx_signature(std::string_view model_bytes) {
  OnnxSignature sig;
  std::vector<std::string> initializers;
  bool have_graph = false;
  onnx_wire::for_each_field(model_bytes, [&](std::uint32_t n, int t, std::uint64_t, std::string_view graph) {
    if (n != 7 || t != 2) return;
    have_graph = true;
    onnx_wire::for_each_field(graph, [&](std::uint32_t gn, int gt, std::uint64_t, std::string_view p) {
      if (gt != 2) return;
      if (gn == 11) sig.inputs.push_back(onnx_wire::parse_value_info(p));
      if (gn == 12) sig.outputs.push_back(onnx_wire::parse_value_info(p));
      if (gn == 5) {
        onnx_wire::for_each_field(p, [&](std::uint32_t tn, int tt, std::uint64_t, std::string_view name) {
          if (tn == 8 && tt == 2) initializers.emplace_back(name);
        });
      }
    });
  });
  if (!have_graph) throw Error(ErrorCode::ModelLoadError, "no graph in model file");
  std::erase_if(sig.inputs, [&](const OnnxValueInfo& v) {
    return std::find(initializers.begin(), initializers.end(), v.name) != initializers.end();
  });
  return sig;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Frozen ONNX network whose single output is the 1000-component vector.
/// The input must be declared as 1x299x299x3 (channels-last) or 1x3x299x299
/// (channels-first); the layout is taken from the declaration.
class PretrainedBackend final : public EmbeddingBackend {
 public:
  PretrainedBackend(const std::filesystem::path& model_file, Normalization norm) : norm_(norm) {
    std::string bytes;
    try {
      bytes = read_text_file(model_file);
    } catch (const Error& e) {
      throw Error(ErrorCode::ModelLoadError, e.what());
    }
    const auto sig = read_onnx_signature(bytes);
    if (sig.inputs.size() != 1 || sig.outputs.size() != 1) {
      throw Error(ErrorCode::ShapeMismatch, model_file.string() + ": expected one input and one output, found " +
                                                std::to_string(sig.inputs.size()) + " and " +
                                                std::to_string(sig.outputs.size()));
    }
    input_name_ = sig.inputs[0].name;
    const auto& d = sig.inputs[0].dims;
    if (d.size() == 4 && d[1] == kInputSide && d[2] == kInputSide && d[3] == 3) {
      channels_last_ = true;
    } else if (d.size() == 4 && d[1] == 3 && d[2] == kInputSide && d[3] == kInputSide) {
      channels_last_ = false;
    } else {
      throw Error(ErrorCode::ShapeMismatch, model_file.string() + ": input '" + input_name_ +
                                                "' is not declared as 1x299x299x3 or 1x3x299x299");
    }
    const auto& od = sig.outputs[0].dims;
    if (!od.empty() && od.back() > 0 && od.back() != static_cast<std::int64_t>(kFeatureDim)) {
      throw Error(ErrorCode::ShapeMismatch, model_file.string() + ": output has " + std::to_string(od.back()) +
                                                " components, expected 1000");
    }

    try {
      net_ = cv::dnn::readNetFromONNX(bytes.data(), bytes.size());
    } catch (const cv::Exception& e) {
      throw Error(ErrorCode::ModelLoadError, model_file.string() + ": " + e.what());
    }
    if (net_.empty()) throw Error(ErrorCode::ModelLoadError, model_file.string() + ": empty network");
    net_.setPreferableBackend(cv::dnn::DNN_BACKEND_OPENCV);
    net_.setPreferableTarget(cv::dnn::DNN_TARGET_CPU);
    id_ = "pretrained:" + hex64(fnv1a64(bytes)) + ":" + std::string(normalization_name(norm));

    // Declared shapes may be symbolic; run once to confirm the output width.
    const auto n = run(ImageTensor(kInputSide, kInputSide, 0.5f)).size();
    if (n != kFeatureDim) {
      throw Error(ErrorCode::ShapeMismatch,
                  model_file.string() + ": output has " + std::to_string(n) + " components, expected 1000");
    }
  }

  std::string id() const override { return id_; }
  bool channels_last() const noexcept { return channels_last_; }

 protected:
  std::vector<float> compute(const ImageTensor& img) const override {
    auto out = run(img);
    if (out.size() != kFeatureDim) {
      throw Error(ErrorCode::BackendFailure, "network produced " + std::to_string(out.size()) + " values");
    }
    return out;
  }

 private:
  std::vector<float> run(const ImageTensor& img) const {
    const int side = kInputSide;
    const int dims_nhwc[4] = {1, side, side, 3};
    const int dims_nchw[4] = {1, 3, side, side};
    cv::Mat blob(4, channels_last_ ? dims_nhwc : dims_nchw, CV_32F);
    auto* dst = blob.ptr<float>();
    const auto src = img.pixels();
    const std::size_t plane = static_cast<std::size_t>(side) * side;
    for (std::size_t i = 0; i < plane; ++i) {
      for (std::size_t c = 0; c < 3; ++c) {
        float v = src[i * 3 + c];
        if (norm_ == Normalization::symmetric) v = 2.0f * v - 1.0f;
        dst[channels_last_ ? i * 3 + c : c * plane + i] = v;
      }
    }
    // cv::dnn::Net is not re-entrant.
    std::lock_guard lock(mutex_);
    try {
      net_.setInput(blob, input_name_);
      const cv::Mat out = net_.forward();
      const auto* p = out.ptr<float>();
      return std::vector<float>(p, p + out.total());
    } catch (const cv::Exception& e) {
      throw Error(ErrorCode::BackendFailure, e.what());
    }
  }

  Normalization norm_;
  bool channels_last_ = true;
  std::string input_name_;
  std::string id_;
  mutable cv::dnn::Net net_;
  mutable std::mutex mutex_;
};

inline std::unique_ptr<EmbeddingBackend> pretrained_backend(const std::filesystem::path& model_file,
                                                            Normalization norm = Normalization::symmetric) {
  return std::make_unique<PretrainedBackend>(model_file, norm);
}

}  // namespace lesion
