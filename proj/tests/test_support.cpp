#include "test_support.hpp"

#include "prosoclap/synth_corpus.hpp"

#include <atomic>
#include <random>

namespace prosoclap::testkit {

TempDir::TempDir() {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("prosoclap_test_" + std::to_string(rd()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
}

TinyData tiny_data(std::uint64_t seed, bool with_noise) {
    TinyData d;
    d.corpus = synth::build_corpus(diagnostics::tiny_synth_spec(seed), with_noise);
    d.frontend = corpus::frontend_from_corpus(d.corpus, 60);
    corpus::attach_frontend(d.corpus, d.frontend);
    return d;
}

std::shared_ptr<model::ClapModel> tiny_model(const text::TextFrontend& frontend, std::uint64_t seed,
                                             corpus::Scale scale) {
    return std::make_shared<model::ClapModel>(diagnostics::tiny_model_config(scale), frontend, seed);
}

}  // namespace prosoclap::testkit
