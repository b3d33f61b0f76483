#include <algorithm>
#include <fstream>

#include "byte_io.hpp"
#include "reslt/data.hpp"
#include "reslt/errors.hpp"

namespace reslt {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
constexpr std::uint32_t kDatasetVersion = 1;

}  // namespace

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("error reading " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("error writing " + path.string());
}

// IDX: big-endian magic (0x0803 images / 0x0801 labels), then one u32 per
// dimension, then unsigned bytes.
LabeledData parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels) {
  detail::ByteReader img(images, "IDX images");
  if (const auto magic = img.u32_be(); magic != kIdxImagesMagic) {
    throw FormatError("IDX images: bad magic " + std::to_string(magic) + ", expected 2051", 0);
  }
  const std::uint32_t n = img.u32_be();
  const std::uint32_t rows = img.u32_be();
  const std::uint32_t cols = img.u32_be();

  detail::ByteReader lab(labels, "IDX labels");
  if (lab.u32_be() != kIdxLabelsMagic) throw FormatError("IDX labels: bad magic", 0);
  const std::uint32_t n_labels = lab.u32_be();
  if (n_labels != n) {
    throw FormatError("IDX dim mismatch: " + std::to_string(n) + " images vs " +
                          std::to_string(n_labels) + " labels",
                      4);
  }

  const std::size_t d = static_cast<std::size_t>(rows) * cols;
  img.need(static_cast<std::size_t>(n) * d, "pixel data");
  lab.need(n, "label data");

  LabeledData out;
  out.features = Tensor2D(n, d);
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      out.features(i, j) = static_cast<float>(static_cast<double>(img.u8()) / 255.0);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    out.labels[i] = lab.u8();
    k = std::max<std::size_t>(k, out.labels[i] + 1);
  }
  img.expect_end();
  lab.expect_end();
  out.num_classes = k;
  return out;
}

LabeledData load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  return parse_idx(read_file(images), read_file(labels));
}

// Native layout: "RLTD", u32 version, u32 K, u32 d, u64 N, K x u32 counts,
// N x u32 labels, N*d x f32 features; all little-endian.
std::vector<std::uint8_t> encode_dataset(const LongTailDataset& dataset) {
  detail::ByteWriter w;
  w.magic("RLTD");
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(dataset.num_classes()));
  w.u32(static_cast<std::uint32_t>(dataset.dim()));
  w.u64(dataset.size());
  for (std::uint32_t c : dataset.class_counts()) w.u32(c);
  for (Label l : dataset.labels()) w.u32(l);
  for (double v : dataset.features().values()) w.f32(static_cast<float>(v));
  return w.take();
}

LongTailDataset decode_dataset(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes, "dataset file");
  r.expect_magic("RLTD");
  const std::size_t version_at = r.offset();
  if (const auto version = r.u32(); version != kDatasetVersion) {
    throw FormatError("dataset file: unsupported version " + std::to_string(version), version_at);
  }
  const std::uint32_t k = r.u32();
  const std::uint32_t d = r.u32();
  const std::uint64_t n = r.u64();
  if (k == 0) throw FormatError("dataset file: zero classes", 8);

  const std::size_t counts_at = r.offset();
  ClassCounts counts(k);
  for (auto& c : counts) c = r.u32();
  r.need(static_cast<std::size_t>(n) * 4, "labels");
  std::vector<Label> labels(n);
  for (auto& l : labels) l = r.u32();
  r.need(static_cast<std::size_t>(n) * d * 4, "features");
  Tensor2D features(n, d);
  for (double& v : features.values()) v = r.f32();
  r.expect_end();

  LongTailDataset ds = [&] {
    try {
      return LongTailDataset::from_parts(std::move(features), std::move(labels), k);
    } catch (const Error& e) {
      throw FormatError(std::string("dataset file: ") + e.what(), counts_at);
    }
  }();
  if (ds.class_counts() != counts) {
    throw FormatError("dataset file: stored class counts disagree with labels", counts_at);
  }
  return ds;
}

void save_dataset(const LongTailDataset& dataset, const std::filesystem::path& path) {
  write_file(path, encode_dataset(dataset));
}

LongTailDataset load_dataset(const std::filesystem::path& path) {
  return decode_dataset(read_file(path));
}

}  // namespace reslt
