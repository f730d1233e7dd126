// Copyright 2026 The cvpb Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cvpb/container.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"

namespace cvpb {
namespace {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

constexpr char kMagic[4] = {'C', 'V', 'P', 'B'};
constexpr std::uint8_t kDtypeF32 = 0;

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    T v;
    std::memcpy(&v, take(sizeof(T), what), sizeof(T));
    return v;
  }
  const std::uint8_t* take(std::size_t n, const char* what) {
    if (n > bytes_.size() - pos_) {
      throw FormatError(std::string("container truncated reading ") + what + " at byte offset " +
                        std::to_string(pos_));
    }
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::size_t pos() const { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t crc(const std::uint8_t* data, std::size_t n) {
  uLong c = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in pieces.
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, std::numeric_limits<uInt>::max()));
    c = crc32(c, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(c);
}

Container params_container(const ParameterSet& set, std::map<std::string, std::string> metadata) {
  Container c;
  c.metadata = std::move(metadata);
  for (const auto& e : set.entries()) c.tensors.emplace_back(e.name, e.value);
  return c;
}

// Overwrites every entry of `set` from the container; names and shapes must match.
void fill_params(ParameterSet& set, const Container& c, const char* what) {
  if (c.tensors.size() != set.entries().size()) {
    throw FormatError(std::string(what) + " checkpoint has " + std::to_string(c.tensors.size()) +
                      " tensors, expected " + std::to_string(set.entries().size()));
  }
  for (auto& e : set.entries()) {
    const Tensor& t = c.tensor(e.name);
    if (t.shape() != e.value.shape()) {
      throw FormatError(std::string(what) + " checkpoint tensor " + e.name + " has shape " + to_string(t.shape()) +
                        ", expected " + to_string(e.value.shape()));
    }
    e.value = t;
  }
}

int meta_int(const Container& c, const std::string& key) {
  const std::string& s = c.meta(key);
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw FormatError("metadata " + key + " is not an integer: '" + s + "'");
}

}  // namespace

const Tensor& Container::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw FormatError("container has no tensor named " + name);
}

bool Container::has(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return true;
  return false;
}

const std::string& Container::meta(const std::string& key) const {
  auto it = metadata.find(key);
  if (it == metadata.end()) throw FormatError("container metadata lacks key " + key);
  return it->second;
}

std::vector<std::uint8_t> encode_container(const Container& c) {
  Writer w;
  w.put_bytes(kMagic, 4);
  w.put<std::uint16_t>(kContainerVersion);

  const std::string meta = nlohmann::json(c.metadata).dump();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(meta.size()));
  w.put_bytes(meta.data(), meta.size());

  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.tensors.size()));
  std::uint64_t offset = 0;
  for (const auto& [name, t] : c.tensors) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) throw std::invalid_argument("tensor name too long");
    w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.put_bytes(name.data(), name.size());
    w.put<std::uint8_t>(kDtypeF32);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
    for (int d : t.shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    w.put<std::uint64_t>(offset);
    offset += t.numel() * sizeof(float);
  }
  w.put<std::uint64_t>(offset);
  for (const auto& [name, t] : c.tensors) w.put_bytes(t.ptr(), t.numel() * sizeof(float));

  const std::uint32_t sum = crc(w.bytes().data(), w.bytes().size());
  w.put<std::uint32_t>(sum);
  return std::move(w.bytes());
}

Container decode_container(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw IntegrityError("not a CVPB container (bad magic)");
  if (bytes.size() < 4 + 2 + 4)
    throw FormatError("container truncated at byte offset " + std::to_string(bytes.size()));
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body, 4);
  if (crc(bytes.data(), body) != stored) throw IntegrityError("container CRC mismatch");

  Reader r(bytes.first(body));
  r.take(4, "magic");
  const auto version = r.get<std::uint16_t>("version");
  if (version != kContainerVersion) throw FormatError("unsupported container version " + std::to_string(version));

  Container c;
  const auto meta_len = r.get<std::uint32_t>("metadata length");
  const auto* meta = reinterpret_cast<const char*>(r.take(meta_len, "metadata"));
  try {
    c.metadata = nlohmann::json::parse(meta, meta + meta_len).get<std::map<std::string, std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("container metadata is not a JSON object of strings: ") + e.what());
  }

  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset;
  };
  std::vector<Entry> dir(r.get<std::uint32_t>("tensor count"));
  for (auto& e : dir) {
    const auto len = r.get<std::uint16_t>("name length");
    const auto* p = reinterpret_cast<const char*>(r.take(len, "tensor name"));
    e.name.assign(p, len);
    if (r.get<std::uint8_t>("dtype") != kDtypeF32) throw FormatError("tensor " + e.name + " has an unknown dtype");
    e.shape.resize(r.get<std::uint8_t>("rank"));
    for (int& d : e.shape) {
      const auto v = r.get<std::uint32_t>("extent");
      if (v > static_cast<std::uint32_t>(std::numeric_limits<int>::max()))
        throw FormatError("tensor " + e.name + " extent out of range");
      d = static_cast<int>(v);
    }
    e.offset = r.get<std::uint64_t>("tensor offset");
  }
  const auto payload_len = r.get<std::uint64_t>("payload length");
  const std::size_t payload_start = r.pos();
  const std::uint8_t* payload = r.take(payload_len, "payload");
  if (r.pos() != body) {
    throw FormatError("container has " + std::to_string(body - r.pos()) + " trailing bytes before the CRC at offset " +
                      std::to_string(r.pos()));
  }

  // Tensors must tile the payload in directory order.
  std::uint64_t expected = 0;
  for (const auto& e : dir) {
    const std::uint64_t n = shape_numel(e.shape) * sizeof(float);
    if (e.offset != expected || e.offset + n > payload_len) {
      throw FormatError("tensor " + e.name + " payload [" + std::to_string(e.offset) + ", +" + std::to_string(n) +
                        ") inconsistent with payload starting at byte " + std::to_string(payload_start));
    }
    Tensor t(e.shape);
    std::memcpy(t.ptr(), payload + e.offset, n);
    c.tensors.emplace_back(e.name, std::move(t));
    expected += n;
  }
  if (expected != payload_len) throw FormatError("payload length does not match the tensor directory");
  return c;
}

void save_container(const std::filesystem::path& path, const Container& c) {
  const std::vector<std::uint8_t> bytes = encode_container(c);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Container load_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_container(bytes);
}

Container backbone_container(const Backbone& backbone, std::map<std::string, std::string> metadata) {
  const BackboneSpec& s = backbone.spec();
  metadata["kind"] = "backbone";
  metadata["in_channels"] = std::to_string(s.in_channels);
  metadata["image_size"] = std::to_string(s.image_size);
  metadata["num_classes"] = std::to_string(s.num_classes);
  for (int b = 0; b < 4; ++b)
    metadata["width" + std::to_string(b)] = std::to_string(s.widths[static_cast<std::size_t>(b)]);
  return params_container(backbone.params(), std::move(metadata));
}

Backbone backbone_from(const Container& c) {
  if (c.meta("kind") != "backbone") throw FormatError("container holds a " + c.meta("kind") + ", not a backbone");
  BackboneSpec s;
  s.in_channels = meta_int(c, "in_channels");
  s.image_size = meta_int(c, "image_size");
  s.num_classes = meta_int(c, "num_classes");
  for (int b = 0; b < 4; ++b) s.widths[static_cast<std::size_t>(b)] = meta_int(c, "width" + std::to_string(b));
  Backbone out(s, 0);
  fill_params(out.params(), c, "backbone");
  return out;
}

Container ssl_head_container(const SslHead& head, std::map<std::string, std::string> metadata) {
  metadata["kind"] = "ssl_head";
  std::ostringstream tau;
  tau.precision(9);
  tau << head.tau;
  metadata["tau"] = tau.str();
  return params_container(head.params, std::move(metadata));
}

SslHead ssl_head_from(const Container& c) {
  if (c.meta("kind") != "ssl_head") throw FormatError("container holds a " + c.meta("kind") + ", not an SSL head");
  const Tensor& w1 = c.tensor("fc1.weight");
  const Tensor& w2 = c.tensor("fc2.weight");
  if (w1.rank() != 2 || w2.rank() != 2) throw FormatError("SSL head weights must be matrices");
  SslHead head(w1.dim(1), 0, w1.dim(0), w2.dim(0));
  fill_params(head.params, c, "SSL head");
  head.tau = std::stof(c.meta("tau"));
  return head;
}

Container rotation_head_container(const RotationHead& head, std::map<std::string, std::string> metadata) {
  metadata["kind"] = "rotation_head";
  return params_container(head.params, std::move(metadata));
}

RotationHead rotation_head_from(const Container& c) {
  if (c.meta("kind") != "rotation_head")
    throw FormatError("container holds a " + c.meta("kind") + ", not a rotation head");
  const Tensor& w = c.tensor("fc.weight");
  if (w.rank() != 2) throw FormatError("rotation head weight must be a matrix");
  RotationHead head(w.dim(1), 0);
  fill_params(head.params, c, "rotation head");
  return head;
}

Container dataset_container(const Dataset& data, std::map<std::string, std::string> metadata) {
  metadata["kind"] = "dataset";
  metadata["num_classes"] = std::to_string(data.num_classes);
  Container c;
  c.metadata = std::move(metadata);
  c.tensors.emplace_back("images", data.images);
  Tensor labels({data.size()});
  for (int i = 0; i < data.size(); ++i) labels[static_cast<std::size_t>(i)] = static_cast<float>(data.labels[static_cast<std::size_t>(i)]);
  c.tensors.emplace_back("labels", std::move(labels));
  return c;
}

Dataset dataset_from(const Container& c) {
  if (c.meta("kind") != "dataset") throw FormatError("container holds a " + c.meta("kind") + ", not a dataset");
  Dataset d;
  d.images = c.tensor("images");
  d.num_classes = meta_int(c, "num_classes");
  const Tensor& labels = c.tensor("labels");
  if (d.images.rank() != 4 || labels.rank() != 1 || labels.dim(0) != d.images.dim(0))
    throw FormatError("dataset images and labels disagree in count");
  d.labels.reserve(labels.numel());
  for (float v : labels.data()) {
    const int y = static_cast<int>(v);
    if (static_cast<float>(y) != v || y < 0 || y >= d.num_classes)
      throw FormatError("dataset label " + std::to_string(v) + " out of range");
    d.labels.push_back(y);
  }
  return d;
}

}  // namespace cvpb
