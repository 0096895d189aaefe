#pragma once

#include <optional>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "idpose/diffusion.hpp"

namespace idpose {

// Longest side of the bounding box of the non-zero mask pixels. Throws
// kEmptyMask when the mask has none.
int mask_bbox_side(const cv::Mat& mask);

// 1.5x the largest mask bounding-box side over all images of a session.
int session_window_side(const std::vector<cv::Mat>& masks);

// Converts 8-bit gray/BGR/BGRA input to BGR, compositing alpha over white.
cv::Mat to_bgr_on_white(const cv::Mat& image);

// Letterboxes into out_size (width, height), keeping the aspect ratio and
// padding with white.
cv::Mat fit_on_white(const cv::Mat& image, cv::Size out_size);

// With a mask: paints the background white, crops a window_side square
// centred on the mask centroid (white outside the frame) and resizes it.
// Without a mask the image is only letterboxed.
cv::Mat preprocess(const cv::Mat& image, const std::optional<cv::Mat>& mask,
                   int window_side, cv::Size out_size);

// False-colour picture of the first three latent channels, upscaled by
// `scale` with nearest-neighbour sampling.
cv::Mat latent_preview(const LatentMap& latent, int scale);

std::string encode_png(const cv::Mat& image);
cv::Mat read_image(const std::string& path, int flags);

}  // namespace idpose
