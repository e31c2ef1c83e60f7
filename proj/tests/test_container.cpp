#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "vmsrb/container.hpp"

using namespace vmsrb;

namespace {

std::string temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "vmsrb_container_tests";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

}  // namespace

TEST_CASE("container round trip is bit exact") {
  Container c;
  VectorXd v(5);
  v << 1.0 / 3.0, -0.0, 1e-300, 2.5, -7.125;
  MatrixXd m(2, 3);
  m << 1, 2, 3, 1.0 / 7.0, 5e-200, -1e200;
  c.add("v", v);
  c.add("m", m);
  c.add_scalar("s", 0.1);
  c.meta()["mu"] = 1234.5678901234567;
  c.meta()["mesh_hash"] = "00ff00ff00ff00ff";
  c.meta()["iterations"] = 42;

  const std::string path = temp_path("roundtrip.bin");
  c.save(path);
  const Container r = Container::load(path);

  REQUIRE(r.has("v"));
  REQUIRE(r.has("m"));
  REQUIRE(r.has("s"));
  CHECK(!r.has("w"));
  CHECK(r.names() == std::vector<std::string>{"m", "s", "v"});

  const VectorXd rv = r.vector("v");
  REQUIRE(rv.size() == 5);
  for (int i = 0; i < 5; ++i) CHECK(rv(i) == v(i));
  CHECK(std::signbit(rv(1)));

  const MatrixXd rm = r.matrix("m");
  REQUIRE(rm.rows() == 2);
  REQUIRE(rm.cols() == 3);
  CHECK((rm - m).norm() == 0.0);
  CHECK(r.scalar("s") == 0.1);

  CHECK(r.meta().at("mu").get<double>() == 1234.5678901234567);
  CHECK(r.meta().at("mesh_hash").get<std::string>() == "00ff00ff00ff00ff");
  CHECK(r.meta().at("iterations").get<int>() == 42);

  SUBCASE("saving again produces an identical file") {
    const std::string path2 = temp_path("roundtrip2.bin");
    r.save(path2);
    std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(sa == sb);
  }
}

TEST_CASE("container access errors") {
  Container c;
  c.add("v", VectorXd(VectorXd::Ones(3)));
  c.add("m", MatrixXd(MatrixXd::Identity(2, 2)));
  CHECK_THROWS_AS((void)c.vector("missing"), ConfigError);
  CHECK_THROWS_AS((void)c.vector("m"), ConfigError);
  CHECK_THROWS_AS((void)c.matrix("v"), ConfigError);
  CHECK_THROWS_AS((void)c.scalar("v"), ConfigError);

  SUBCASE("re-adding replaces the previous array") {
    c.add("v", VectorXd(VectorXd::Constant(2, 9.0)));
    CHECK(c.vector("v").size() == 2);
    CHECK(c.vector("v")(0) == 9.0);
  }
}

TEST_CASE("container rejects malformed files") {
  CHECK_THROWS_AS(Container::load(temp_path("does_not_exist.bin")), ConfigError);

  SUBCASE("bad magic") {
    const std::string path = temp_path("badmagic.bin");
    std::ofstream out(path, std::ios::binary);
    out << "NOTMAGIC" << std::string(64, '\0');
    out.close();
    CHECK_THROWS_AS(Container::load(path), ConfigError);
  }

  SUBCASE("truncated header") {
    const std::string path = temp_path("trunc.bin");
    std::ofstream out(path, std::ios::binary);
    out << "VMSRBBIN";
    const std::uint64_t len = 1000;
    out.write(reinterpret_cast<const char*>(&len), 8);
    out << "{\"format\":\"VMSRBBIN\"";
    out.close();
    CHECK_THROWS_AS(Container::load(path), ConfigError);
  }

  SUBCASE("unsupported version") {
    const std::string path = temp_path("version.bin");
    const std::string header = R"({"format":"VMSRBBIN","version":7,"arrays":[]})";
    std::ofstream out(path, std::ios::binary);
    out << "VMSRBBIN";
    const std::uint64_t len = header.size();
    out.write(reinterpret_cast<const char*>(&len), 8);
    out << header;
    out.close();
    CHECK_THROWS_AS(Container::load(path), ConfigError);
  }

  SUBCASE("array payload out of bounds") {
    const std::string path = temp_path("oob.bin");
    const std::string header =
        R"({"format":"VMSRBBIN","version":1,"arrays":[{"name":"v","dtype":"f8","shape":[4],"offset":0,"bytes":32}]})";
    std::ofstream out(path, std::ios::binary);
    out << "VMSRBBIN";
    const std::uint64_t len = header.size();
    out.write(reinterpret_cast<const char*>(&len), 8);
    out << header;
    const double one = 1.0;  // only 8 of the promised 32 bytes
    out.write(reinterpret_cast<const char*>(&one), 8);
    out.close();
    CHECK_THROWS_AS(Container::load(path), ConfigError);
  }
}
