// Python surface for the binarization core. Arrays cross the boundary as
// numpy buffers (float32, C order); filters and packed vectors stay opaque.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <vector>

#include "dab/binarize.hpp"
#include "dab/bitkernel.hpp"
#include "dab/data.hpp"
#include "dab/errors.hpp"
#include "dab/grad.hpp"
#include "dab/tensor.hpp"

namespace py = pybind11;
using namespace dab;

namespace {

using FloatArray =
    py::array_t<float, py::array::c_style | py::array::forcecast>;

std::vector<float> as_vector(const FloatArray& a) {
    auto buf = a.request();
    const float* p = static_cast<const float*>(buf.ptr);
    return std::vector<float>(p, p + buf.size);
}

py::array_t<float> as_array(const std::vector<float>& v) {
    py::array_t<float> out(py::ssize_t(v.size()));
    std::memcpy(out.mutable_data(), v.data(), v.size() * sizeof(float));
    return out;
}

py::array_t<float> tensor_to_array(const RealTensor& t) {
    std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
    py::array_t<float> out(shape);
    std::memcpy(out.mutable_data(), t.ptr(), t.numel() * sizeof(float));
    return out;
}

PackedMatrix pack_rows(const FloatArray& a) {
    auto buf = a.request();
    if (buf.ndim != 2) fail(ErrorKind::Shape, "expected a 2-d array");
    std::size_t rows = std::size_t(buf.shape[0]);
    std::size_t cols = std::size_t(buf.shape[1]);
    const float* p = static_cast<const float*>(buf.ptr);
    PackedMatrix out(rows, cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) {
            float v = p[i * cols + j];
            if (v == 1.0f)
                out.set(i, j, true);
            else if (v != -1.0f)
                fail(ErrorKind::Encoding, "inputs must be exactly +1 or -1");
        }
    return out;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "distribution-aware weight binarization: split search, packed "
              "popcount kernels, surrogate gradients, synthetic data";

    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            switch (e.kind()) {
                case ErrorKind::Format:
                case ErrorKind::Io:
                case ErrorKind::Numeric:
                case ErrorKind::State:
                    PyErr_SetString(PyExc_RuntimeError, e.what());
                    break;
                default:
                    PyErr_SetString(PyExc_ValueError, e.what());
            }
        }
    });

    py::enum_<Scheme>(m, "Scheme")
        .value("dab", Scheme::Dab)
        .value("xnor", Scheme::Xnor)
        .value("bnn", Scheme::Bnn);

    py::enum_<Direction>(m, "Direction")
        .value("ascending", Direction::Ascending)
        .value("descending", Direction::Descending);

    py::enum_<SteKind>(m, "SteKind")
        .value("value_scaled", SteKind::ValueScaled)
        .value("indicator", SteKind::Indicator);

    py::class_<KSearchResult>(m, "KSearchResult")
        .def_readonly("k", &KSearchResult::k)
        .def_readonly("direction", &KSearchResult::direction)
        .def_readonly("objective", &KSearchResult::objective)
        .def("__repr__", [](const KSearchResult& r) {
            return "KSearchResult(k=" + std::to_string(r.k) +
                   ", direction=" +
                   (r.direction == Direction::Ascending ? "ascending"
                                                        : "descending") +
                   ", objective=" + std::to_string(r.objective) + ")";
        });

    py::class_<BinarizedFilter>(m, "BinarizedFilter")
        .def_readonly("n", &BinarizedFilter::n)
        .def_readonly("k", &BinarizedFilter::k)
        .def_readonly("alpha", &BinarizedFilter::alpha)
        .def_readonly("beta", &BinarizedFilter::beta)
        .def(
            "mask",
            [](const BinarizedFilter& f) {
                py::array_t<bool> out(py::ssize_t(f.n));
                bool* p = out.mutable_data();
                for (std::size_t i = 0; i < f.n; ++i) p[i] = f.mask.get(i);
                return out;
            },
            "Group assignment per weight: True selects the alpha group.")
        .def("__repr__", [](const BinarizedFilter& f) {
            return "BinarizedFilter(n=" + std::to_string(f.n) +
                   ", k=" + std::to_string(f.k) +
                   ", alpha=" + std::to_string(f.alpha) +
                   ", beta=" + std::to_string(f.beta) + ")";
        });

    py::class_<PackedBits>(m, "PackedBits")
        .def("__len__", &PackedBits::size)
        .def("popcount", &PackedBits::popcount)
        .def("get", &PackedBits::get);

    m.def(
        "find_optimal_k",
        [](const FloatArray& w) { return find_optimal_k(as_vector(w)); },
        py::arg("weights"),
        "Best two-group split of a flat weight vector; alpha names the "
        "group with the larger mean magnitude.");

    m.def(
        "binarize_dab",
        [](const FloatArray& w) { return binarize_dab(as_vector(w)); },
        py::arg("weights"));

    m.def(
        "binarize_dab_fixed_k",
        [](const FloatArray& w, std::size_t k, Direction d) {
            return binarize_dab_fixed_k(as_vector(w), k, d);
        },
        py::arg("weights"), py::arg("k"), py::arg("direction"));

    m.def(
        "binarize_xnor",
        [](const FloatArray& w) { return binarize_xnor(as_vector(w)); },
        py::arg("weights"));

    m.def(
        "binarize_bnn",
        [](const FloatArray& w) { return binarize_bnn(as_vector(w)); },
        py::arg("weights"));

    m.def(
        "brute_force_binarize",
        [](const FloatArray& w) { return brute_force_binarize(as_vector(w)); },
        py::arg("weights"),
        "Exhaustive reference search; rejects more than 20 weights.");

    m.def(
        "reconstruct",
        [](const BinarizedFilter& f) { return as_array(reconstruct(f)); },
        py::arg("filter"));

    m.def(
        "approx_error",
        [](const FloatArray& w, const BinarizedFilter& f) {
            return approx_error(as_vector(w), f);
        },
        py::arg("weights"), py::arg("filter"),
        "Squared distance between the weights and the filter's "
        "reconstruction.");

    m.def(
        "binarize_layer",
        [](const FloatArray& w, Scheme scheme, int threads) {
            auto buf = w.request();
            if (buf.ndim < 2)
                fail(ErrorKind::Shape,
                     "expected at least 2 dimensions (filters first)");
            std::vector<std::size_t> shape(buf.shape.begin(),
                                           buf.shape.end());
            RealTensor t(shape, as_vector(w));
            return binarize_layer(t, scheme, threads);
        },
        py::arg("weights"), py::arg("scheme") = Scheme::Dab,
        py::arg("threads") = 1,
        "Binarize every filter of a weight tensor (dim 0 indexes filters).");

    m.def(
        "pack_signs",
        [](const FloatArray& x) {
            auto buf = x.request();
            const float* p = static_cast<const float*>(buf.ptr);
            return pack_signs(std::span<const float>(p, std::size_t(buf.size)));
        },
        py::arg("signs"), "Pack an exactly-+-1 vector into bits.");

    m.def(
        "dab_dot",
        [](const FloatArray& x, const BinarizedFilter& f) {
            auto buf = x.request();
            const float* p = static_cast<const float*>(buf.ptr);
            return dab_dot(
                pack_signs(std::span<const float>(p, std::size_t(buf.size))),
                f);
        },
        py::arg("signs"), py::arg("filter"),
        "Popcount dot product of a +-1 vector with a two-value filter.");

    m.def(
        "dab_gemm",
        [](const FloatArray& x, const std::vector<BinarizedFilter>& filters,
           int threads) {
            return tensor_to_array(dab_gemm(pack_rows(x), filters, threads));
        },
        py::arg("signs"), py::arg("filters"), py::arg("threads") = 1,
        "rows x filters popcount matmul; `signs` is a 2-d +-1 array.");

    m.def(
        "binary_conv2d",
        [](const FloatArray& x, const std::vector<BinarizedFilter>& filters,
           int stride, int pad, int threads) {
            auto buf = x.request();
            if (buf.ndim != 4)
                fail(ErrorKind::Shape, "expected an NCHW input array");
            std::vector<std::size_t> shape(buf.shape.begin(),
                                           buf.shape.end());
            RealTensor t(shape, as_vector(x));
            return tensor_to_array(
                binary_conv2d(t, filters, stride, pad, threads));
        },
        py::arg("signs"), py::arg("filters"), py::arg("stride") = 1,
        py::arg("pad") = 0, py::arg("threads") = 1,
        "Convolution of a +-1 NCHW array; padded taps read -1.");

    m.def(
        "dab_backward_paper",
        [](const FloatArray& w, const BinarizedFilter& f,
           const FloatArray& upstream, SteKind ste) {
            return as_array(
                dab_backward_paper(as_vector(w), f, as_vector(upstream), ste));
        },
        py::arg("weights"), py::arg("filter"), py::arg("upstream"),
        py::arg("ste") = SteKind::ValueScaled,
        "Surrogate gradient through the binarization map.");

    m.def(
        "dab_backward_projection",
        [](const BinarizedFilter& f, const FloatArray& upstream) {
            return as_array(dab_backward_projection(f, as_vector(upstream)));
        },
        py::arg("filter"), py::arg("upstream"),
        "Exact fixed-mask Jacobian-vector product (per-group averaging).");

    m.def(
        "generate_sketches",
        [](const std::vector<std::string>& classes, std::size_t per_class,
           std::size_t size, std::uint32_t seed) {
            Dataset ds = generate_sketches(classes, per_class, size, seed);
            py::array_t<int> labels(py::ssize_t(ds.labels.size()));
            std::memcpy(labels.mutable_data(), ds.labels.data(),
                        ds.labels.size() * sizeof(int));
            return py::make_tuple(tensor_to_array(ds.images), labels);
        },
        py::arg("classes"), py::arg("per_class"), py::arg("size") = 32,
        py::arg("seed") = 1,
        "Deterministic binary stroke images; returns (images, labels).");

    m.def("sketch_class_names", [] { return sketch_class_names(); });

#ifdef DABNET_VERSION
    m.attr("__version__") = DABNET_VERSION;
#endif
}
