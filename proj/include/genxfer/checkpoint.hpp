// checkpoint.hpp
//
// Binary model container. Layout, all integers and doubles little-endian:
//
//   "GXF1"  u32 version  u32 kind  <payload>
//
// Mlp payload:   u32 n_dims, u32 dims[n_dims], u32 hidden_act,
//                u32 output_act, f64 output_bound, u64 n_params, f64 params[]
// kind 1 mlp:        Mlp
// kind 2 score:      u32 d_x, u32 d_c, u32 tau_embed, u32 sin_k, Mlp
// kind 3 flow:       u32 d_x, u32 d_c, u32 base, u32 n_layers, then per layer
//                    u32 tag (0 coupling, 1 permutation) and
//                      coupling: u32 kind, f64 bound, u32 n1, u32 part1[],
//                                u32 n2, u32 part2[], Mlp
//                      permutation: u32 n, u32 perm[]
// kind 4 embedding:  u32 frozen, u32 n_pass, u32 pass[], Mlp
// kind 5 decoder:    Mlp
//
// A fitted pipeline is a directory holding manifest.txt (key=value lines)
// next to the checkpoint files it names.

#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "genxfer/transfer.hpp"

namespace genxfer {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class CheckpointKind : std::uint32_t {
  mlp = 1,
  score_model = 2,
  coupling_flow = 3,
  embedding = 4,
  decoder = 5,
};

std::string encode_mlp(const Mlp& net);
std::string encode_model(const GenerativeModel& model);
std::string encode_embedding(const EmbeddingMap& e);
std::string encode_decoder(const DecoderMap& d);

/// Decoders throw std::runtime_error on bad magic, version, kind or truncation.
Mlp decode_mlp(const std::string& bytes);
GenerativeModel decode_model(const std::string& bytes);
EmbeddingMap decode_embedding(const std::string& bytes);
DecoderMap decode_decoder(const std::string& bytes);

CheckpointKind peek_kind(const std::string& bytes);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

using Manifest = std::map<std::string, std::string>;
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& m);

void save_pipeline(const std::filesystem::path& dir, const FittedPipeline& fit);
FittedPipeline load_pipeline(const std::filesystem::path& dir);

}  // namespace genxfer
