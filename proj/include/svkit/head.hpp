#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "svkit/pooling.hpp"
#include "svkit/rng.hpp"

namespace svkit {

// Lightweight time-dilated frame encoder: each block maps frame t from the
// concatenation of frames (t-d, t, t+d) with replicate padding, then ReLU.
struct FrameEncoderConfig {
  std::size_t n_blocks = 1;
  std::size_t hidden = 64;
  std::vector<std::size_t> dilations;

  void validate() const {
    require(n_blocks >= 1 && hidden >= 1, "frame encoder: empty config");
    require(dilations.size() == n_blocks,
            "frame encoder: dilations length must equal n_blocks");
  }
};

struct HeadConfig {
  std::size_t input_dim = 0;
  std::size_t n_layers = 0;
  std::size_t embed_dim = 192;
  PoolingConfig pooling;
  std::optional<FrameEncoderConfig> frame_encoder;

  std::size_t pool_input_dim() const {
    return frame_encoder ? frame_encoder->hidden : input_dim;
  }
  std::size_t pool_output_dim() const { return 2 * pool_input_dim(); }

  void validate() const {
    require(input_dim >= 1 && n_layers >= 1 && embed_dim >= 1,
            "HeadConfig: dims must be >= 1");
    pooling.validate();
    if (frame_encoder) frame_encoder->validate();
  }
};

struct EncoderBlockParams {
  Matrix w;  // hidden x 3*prev_width
  std::vector<double> b;
};

// All trainable tensors of the downstream head. Unused pooling branches
// stay empty. The same struct doubles as the gradient container.
struct HeadParams {
  std::vector<double> layer_logits;
  AttentivePoolParams attentive;
  ChannelContextPoolParams channel_context;
  std::vector<EncoderBlockParams> encoder;
  Matrix embed_w;  // embed_dim x pool_output_dim
  std::vector<double> embed_b;
};

// Uniform +-sqrt(1/fan_in) for affine tensors and logits; see training for
// classifier weights.
HeadParams init_head_params(const HeadConfig& config, Rng& rng);
HeadParams zero_head_grads(const HeadConfig& config);

Matrix frame_encoder_forward(const Matrix& frames,
                             const std::vector<EncoderBlockParams>& blocks,
                             const FrameEncoderConfig& config);
// d_out -> d_frames; block gradients accumulate into *grads when given.
Matrix frame_encoder_backward(const Matrix& frames,
                              const std::vector<EncoderBlockParams>& blocks,
                              const FrameEncoderConfig& config, const Matrix& d_out,
                              std::vector<EncoderBlockParams>* grads);

std::vector<double> head_forward(const FeatureStack& stack,
                                 const HeadParams& params,
                                 const HeadConfig& config);
// Accumulates gradients of <d_embedding, embedding> into *grads.
void head_backward(const FeatureStack& stack, const HeadParams& params,
                   const HeadConfig& config,
                   const std::vector<double>& d_embedding, HeadParams* grads);

std::size_t param_count(const HeadConfig& config);

// Checkpoint: one SVF1 file per tensor plus an index.csv mapping
// tensor_name -> file. class_weights ride along when provided.
void save_checkpoint(const std::filesystem::path& dir, const HeadParams& params,
                     const Matrix* class_weights = nullptr);
HeadParams load_checkpoint(const std::filesystem::path& dir,
                           const HeadConfig& config,
                           Matrix* class_weights = nullptr);

}  // namespace svkit
