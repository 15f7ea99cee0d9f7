#include <cstdio>
#include <fstream>
#include <sstream>

#include "adma/corpus/corpus.hpp"
#include "adma/error.hpp"
#include "adma/io/binary.hpp"

namespace adma::corpus {

namespace {

namespace fs = std::filesystem;

void write_header(io::BinaryWriter& w, const char* magic, const SpeakerBank& bank) {
  w.bytes(magic);
  w.u32(static_cast<std::uint32_t>(bank.vocab_size));
  w.u32(static_cast<std::uint32_t>(bank.feature_dim));
  w.u32(static_cast<std::uint32_t>(bank.frames_per_token));
  w.u32(static_cast<std::uint32_t>(bank.num_speakers));
}

struct Header {
  std::size_t k, f, d, s;
};

Header read_header(io::BinaryReader& r, const char* magic) {
  r.expect_magic(magic);
  Header h{};
  h.k = r.u32();
  h.f = r.u32();
  h.d = r.u32();
  h.s = r.u32();
  return h;
}

std::string record_name(const char* split, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%05zu", split, i);
  return buf;
}

}  // namespace

void write_utterance(const fs::path& path, const SpeakerBank& bank, const Utterance& utt) {
  io::BinaryWriter w;
  write_header(w, "ADMA1", bank);
  w.u32(static_cast<std::uint32_t>(utt.speaker));
  w.u32(static_cast<std::uint32_t>(utt.tokens.size()));
  for (std::size_t t : utt.tokens) w.u32(static_cast<std::uint32_t>(t));
  w.u32(static_cast<std::uint32_t>(utt.num_frames()));
  w.f64s(utt.features.data());
  w.save(path);
}

Utterance read_utterance(const fs::path& path, const SpeakerBank& bank) {
  auto r = io::BinaryReader::open(path);
  const Header h = read_header(r, "ADMA1");
  if (h.k != bank.vocab_size || h.f != bank.feature_dim || h.d != bank.frames_per_token || h.s != bank.num_speakers) {
    throw FormatError(path.string() + ": header dimensions do not match the speaker bank");
  }
  Utterance u;
  u.speaker = r.u32();
  const std::size_t ty = r.u32();
  u.tokens.resize(ty);
  for (auto& t : u.tokens) {
    t = r.u32();
    if (t >= h.k) throw FormatError(path.string() + ": token id out of range");
  }
  const std::size_t n = r.u32();
  if (n != ty * h.d) throw FormatError(path.string() + ": frame count does not equal T_y * d");
  u.features = Tensor::from({h.f, n}, r.f64s(h.f * n));
  if (!r.at_end()) throw FormatError(path.string() + ": trailing bytes");
  u.padded_tokens = u.tokens;
  u.padded_tokens.resize(n, h.k);
  u.mask.assign(n, 0);
  return u;
}

void save_corpus(const Corpus& corpus, const fs::path& dir) {
  fs::create_directories(dir);
  {
    io::BinaryWriter w;
    write_header(w, "ADMAB", corpus.bank);
    w.f64s(corpus.bank.templates.data());
    w.f64s(corpus.bank.offsets.data());
    w.save(dir / "bank.bin");
  }
  {
    io::Config cfg;
    write_corpus_config(corpus.config, cfg);
    std::ofstream out(dir / "corpus.cfg");
    out << "# synthetic corpus parameters\n" << cfg.to_text();
  }
  std::ofstream manifest(dir / "manifest.csv");
  manifest << "id,speaker,length\n";
  auto dump = [&](const char* split, const std::vector<Utterance>& utts) {
    for (std::size_t i = 0; i < utts.size(); ++i) {
      const std::string id = record_name(split, i);
      write_utterance(dir / (id + ".bin"), corpus.bank, utts[i]);
      manifest << id << ',' << utts[i].speaker << ',' << utts[i].num_frames() << '\n';
    }
  };
  dump("train", corpus.train);
  dump("eval", corpus.eval);
}

Corpus load_corpus(const fs::path& dir) {
  Corpus c;
  c.config = corpus_config_from(io::Config::load(dir / "corpus.cfg"));
  auto r = io::BinaryReader::open(dir / "bank.bin");
  const Header h = read_header(r, "ADMAB");
  c.bank.vocab_size = h.k;
  c.bank.feature_dim = h.f;
  c.bank.frames_per_token = h.d;
  c.bank.num_speakers = h.s;
  c.bank.templates = Tensor::from({h.k, h.f, h.d}, r.f64s(h.k * h.f * h.d));
  c.bank.offsets = Tensor::from({h.s, h.f}, r.f64s(h.s * h.f));
  if (!r.at_end()) throw FormatError((dir / "bank.bin").string() + ": trailing bytes");

  std::ifstream manifest(dir / "manifest.csv");
  if (!manifest) throw FormatError((dir / "manifest.csv").string() + ": missing");
  std::string line;
  std::getline(manifest, line);
  if (line != "id,speaker,length") throw FormatError("manifest.csv: unexpected header '" + line + "'");
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id, speaker, length;
    std::getline(ls, id, ',');
    std::getline(ls, speaker, ',');
    std::getline(ls, length, ',');
    Utterance u = read_utterance(dir / (id + ".bin"), c.bank);
    if (std::to_string(u.speaker) != speaker || std::to_string(u.num_frames()) != length) {
      throw FormatError("manifest.csv: row '" + line + "' disagrees with " + id + ".bin");
    }
    if (id.rfind("train-", 0) == 0) {
      c.train.push_back(std::move(u));
    } else if (id.rfind("eval-", 0) == 0) {
      c.eval.push_back(std::move(u));
    } else {
      throw FormatError("manifest.csv: unknown split in id '" + id + "'");
    }
  }
  return c;
}

void write_matrix(const fs::path& path, const Tensor& m) {
  io::BinaryWriter w;
  w.bytes("ADMAT");
  w.u32(static_cast<std::uint32_t>(m.rows()));
  w.u32(static_cast<std::uint32_t>(m.cols()));
  w.f64s(m.data());
  w.save(path);
}

Tensor read_matrix(const fs::path& path) {
  auto r = io::BinaryReader::open(path);
  r.expect_magic("ADMAT");
  const std::size_t rows = r.u32();
  const std::size_t cols = r.u32();
  Tensor m = Tensor::from({rows, cols}, r.f64s(rows * cols));
  if (!r.at_end()) throw FormatError(path.string() + ": trailing bytes");
  return m;
}

}  // namespace adma::corpus
