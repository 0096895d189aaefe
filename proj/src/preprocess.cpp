#include "idpose/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "idpose/errors.hpp"

namespace idpose {

namespace {

constexpr double kWindowScale = 1.5;
const cv::Scalar kWhite(255, 255, 255);

cv::Mat binary_mask(const cv::Mat& mask) {
  cv::Mat gray;
  if (mask.channels() == 1) {
    gray = mask;
  } else {
    cv::cvtColor(mask, gray,
                 mask.channels() == 4 ? cv::COLOR_BGRA2GRAY : cv::COLOR_BGR2GRAY);
  }
  cv::Mat out;
  cv::compare(gray, 0, out, cv::CMP_GT);
  return out;
}

}  // namespace

int mask_bbox_side(const cv::Mat& mask) {
  const cv::Mat bin = binary_mask(mask);
  std::vector<cv::Point> nonzero;
  cv::findNonZero(bin, nonzero);
  if (nonzero.empty()) throw Error(ErrorCode::kEmptyMask, "mask is empty");
  const cv::Rect box = cv::boundingRect(nonzero);
  return std::max(box.width, box.height);
}

int session_window_side(const std::vector<cv::Mat>& masks) {
  int largest = 0;
  for (const auto& m : masks) largest = std::max(largest, mask_bbox_side(m));
  if (largest == 0) throw Error(ErrorCode::kEmptyMask, "no masks in session");
  return static_cast<int>(std::lround(kWindowScale * largest));
}

cv::Mat to_bgr_on_white(const cv::Mat& image) {
  if (image.empty() || image.depth() != CV_8U) {
    throw ValidationError({"image"});
  }
  cv::Mat out;
  switch (image.channels()) {
    case 1:
      cv::cvtColor(image, out, cv::COLOR_GRAY2BGR);
      return out;
    case 3:
      return image.clone();
    case 4: {
      out.create(image.size(), CV_8UC3);
      for (int y = 0; y < image.rows; ++y) {
        for (int x = 0; x < image.cols; ++x) {
          const auto px = image.at<cv::Vec4b>(y, x);
          const double a = px[3] / 255.0;
          for (int c = 0; c < 3; ++c) {
            out.at<cv::Vec3b>(y, x)[c] = cv::saturate_cast<uchar>(
                a * px[c] + (1.0 - a) * 255.0);
          }
        }
      }
      return out;
    }
    default:
      throw ValidationError({"image"});
  }
}

cv::Mat fit_on_white(const cv::Mat& image, cv::Size out_size) {
  if (out_size.width < 1 || out_size.height < 1) throw ValidationError({"size"});
  const double scale = std::min(double(out_size.width) / image.cols,
                                double(out_size.height) / image.rows);
  const cv::Size inner(std::max(1, int(std::lround(image.cols * scale))),
                       std::max(1, int(std::lround(image.rows * scale))));
  cv::Mat resized;
  cv::resize(image, resized, inner, 0, 0, cv::INTER_AREA);
  cv::Mat out(out_size, image.type(), kWhite);
  const int x0 = (out_size.width - inner.width) / 2;
  const int y0 = (out_size.height - inner.height) / 2;
  resized.copyTo(out(cv::Rect(x0, y0, inner.width, inner.height)));
  return out;
}

cv::Mat preprocess(const cv::Mat& image, const std::optional<cv::Mat>& mask,
                   int window_side, cv::Size out_size) {
  cv::Mat bgr = to_bgr_on_white(image);
  if (!mask) return fit_on_white(bgr, out_size);

  if (mask->size() != image.size()) {
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("mask is {}x{} but image is {}x{}", mask->cols,
                            mask->rows, image.cols, image.rows));
  }
  if (window_side < 1) throw ValidationError({"window_side"});
  const cv::Mat bin = binary_mask(*mask);
  const cv::Moments mo = cv::moments(bin, true);
  if (mo.m00 <= 0.0) throw Error(ErrorCode::kEmptyMask, "mask is empty");
  bgr.setTo(kWhite, ~bin);

  // Window centred on the centroid, measured in pixel centres.
  const double cx = mo.m10 / mo.m00 + 0.5;
  const double cy = mo.m01 / mo.m00 + 0.5;
  const cv::Rect window(int(std::lround(cx - window_side / 2.0)),
                        int(std::lround(cy - window_side / 2.0)), window_side,
                        window_side);
  cv::Mat crop(window.size(), CV_8UC3, kWhite);
  const cv::Rect inside = window & cv::Rect(0, 0, bgr.cols, bgr.rows);
  if (inside.area() > 0) {
    bgr(inside).copyTo(crop(inside - window.tl()));
  }
  return fit_on_white(crop, out_size);
}

cv::Mat latent_preview(const LatentMap& latent, int scale) {
  const LatentShape& s = latent.shape();
  if (scale < 1) throw ValidationError({"scale"});
  cv::Mat small(s.height, s.width, CV_8UC3, kWhite);
  for (int y = 0; y < s.height; ++y) {
    for (int x = 0; x < s.width; ++x) {
      auto& px = small.at<cv::Vec3b>(y, x);
      for (int c = 0; c < std::min(3, s.channels); ++c) {
        // Empty latent cells stay white; features tint them.
        px[2 - c] = cv::saturate_cast<uchar>(255.0 - 510.0 * std::abs(latent.at(c, y, x)));
      }
    }
  }
  cv::Mat out;
  cv::resize(small, out, cv::Size(s.width * scale, s.height * scale), 0, 0,
             cv::INTER_NEAREST);
  return out;
}

std::string encode_png(const cv::Mat& image) {
  std::vector<uchar> buf;
  if (!cv::imencode(".png", image, buf)) {
    throw Error(ErrorCode::kIo, "PNG encoding failed");
  }
  return {buf.begin(), buf.end()};
}

cv::Mat read_image(const std::string& path, int flags) {
  cv::Mat img = cv::imread(path, flags);
  if (img.empty()) throw Error(ErrorCode::kIo, fmt::format("cannot read image {}", path));
  return img;
}

}  // namespace idpose
