#include "octseg/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

namespace octseg {

namespace {

cv::Mat decode(const std::filesystem::path& path) {
  cv::Mat mat;
  try {
    mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  } catch (const cv::Exception& e) {
    throw IoError("cannot decode " + path.string() + ": " + e.what());
  }
  if (mat.empty()) throw IoError("cannot decode " + path.string());
  return mat;
}

void encode(const std::filesystem::path& path, const cv::Mat& mat) {
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), mat);
  } catch (const cv::Exception& e) {
    throw IoError("cannot write " + path.string() + ": " + e.what());
  }
  if (!ok) throw IoError("cannot write " + path.string());
}

}  // namespace

Tensor<float> read_gray_png(const std::filesystem::path& path, BitDepth depth) {
  const cv::Mat mat = decode(path);
  if (mat.channels() != 1) {
    throw IoError("decode error in " + path.string() + ": expected a grayscale PNG, found " +
                  std::to_string(mat.channels()) + " channels");
  }
  const int expected = depth == BitDepth::k8 ? CV_8U : CV_16U;
  if (mat.depth() != expected) {
    throw IoError("decode error in " + path.string() + ": sample depth does not match the " +
                  std::to_string(static_cast<int>(depth)) + "-bit setting");
  }
  const double scale = depth == BitDepth::k8 ? 255.0 : 65535.0;
  Tensor<float> out({mat.rows, mat.cols});
  for (int y = 0; y < mat.rows; ++y) {
    for (int x = 0; x < mat.cols; ++x) {
      const double code = depth == BitDepth::k8 ? mat.at<std::uint8_t>(y, x) : mat.at<std::uint16_t>(y, x);
      out.at(y, x) = static_cast<float>(code / scale);
    }
  }
  return out;
}

Tensor<std::uint8_t> read_mask_png(const std::filesystem::path& path) {
  const cv::Mat mat = decode(path);
  if (mat.channels() != 1) {
    throw IoError("decode error in " + path.string() + ": mask must be single-channel");
  }
  Tensor<std::uint8_t> out({mat.rows, mat.cols});
  for (int y = 0; y < mat.rows; ++y) {
    for (int x = 0; x < mat.cols; ++x) {
      const bool on = mat.depth() == CV_16U ? mat.at<std::uint16_t>(y, x) > 32767
                                            : mat.at<std::uint8_t>(y, x) > 127;
      out.at(y, x) = on ? 1 : 0;
    }
  }
  return out;
}

void write_gray_png(const std::filesystem::path& path, const Tensor<float>& image, BitDepth depth) {
  const int h = static_cast<int>(image.dim(0));
  const int w = static_cast<int>(image.dim(1));
  if (depth == BitDepth::k8) {
    cv::Mat mat(h, w, CV_8U);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        mat.at<std::uint8_t>(y, x) =
            static_cast<std::uint8_t>(std::lround(std::clamp(image.at(y, x), 0.0f, 1.0f) * 255.0f));
    encode(path, mat);
  } else {
    cv::Mat mat(h, w, CV_16U);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        mat.at<std::uint16_t>(y, x) = static_cast<std::uint16_t>(
            std::lround(std::clamp(image.at(y, x), 0.0f, 1.0f) * 65535.0f));
    encode(path, mat);
  }
}

void write_mask_png(const std::filesystem::path& path, const Tensor<std::uint8_t>& labels) {
  const int h = static_cast<int>(labels.dim(0));
  const int w = static_cast<int>(labels.dim(1));
  cv::Mat mat(h, w, CV_8U);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) mat.at<std::uint8_t>(y, x) = labels.at(y, x) ? 255 : 0;
  encode(path, mat);
}

void write_rgb_png(const std::filesystem::path& path, const Tensor<std::uint8_t>& rgb) {
  const int h = static_cast<int>(rgb.dim(0));
  const int w = static_cast<int>(rgb.dim(1));
  cv::Mat mat(h, w, CV_8UC3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // OpenCV stores BGR.
      mat.at<cv::Vec3b>(y, x) = {rgb.at(y, x, 2), rgb.at(y, x, 1), rgb.at(y, x, 0)};
    }
  }
  encode(path, mat);
}

Tensor<std::uint8_t> read_rgb_png(const std::filesystem::path& path) {
  const cv::Mat mat = decode(path);
  if (mat.channels() != 3 || mat.depth() != CV_8U) {
    throw IoError("decode error in " + path.string() + ": expected 8-bit RGB");
  }
  Tensor<std::uint8_t> out({mat.rows, mat.cols, 3});
  for (int y = 0; y < mat.rows; ++y) {
    for (int x = 0; x < mat.cols; ++x) {
      const auto& px = mat.at<cv::Vec3b>(y, x);
      out.at(y, x, 0) = px[2];
      out.at(y, x, 1) = px[1];
      out.at(y, x, 2) = px[0];
    }
  }
  return out;
}

}  // namespace octseg
