"""Writes the tiny ONNX models used by the pretrained-backend tests.

Each model averages the input over the spatial axes (one value per colour
channel) and applies a dense layer with closed-form weights:

    out[j] = sum_c mean_c * weight(c, j) + bias(j)
    weight(c, j) = (c - 1) * (j + 1) / 1000
    bias(j)      = (j % 7) / 100

Run from this directory: python3 make_onnx_fixtures.py
"""
import numpy as np
import onnx
from onnx import TensorProto, helper, numpy_helper


def dense_params(n_out):
    j = np.arange(n_out, dtype=np.float64)
    w = np.stack([(c - 1) * (j + 1) / 1000.0 for c in range(3)], axis=1).astype(np.float32)
    b = ((j % 7) / 100.0).astype(np.float32)
    return w, b


def build(path, channels_last, n_out):
    shape = [1, 299, 299, 3] if channels_last else [1, 3, 299, 299]
    inp = helper.make_tensor_value_info("input", TensorProto.FLOAT, shape)
    out = helper.make_tensor_value_info("output", TensorProto.FLOAT, [1, n_out])
    w, b = dense_params(n_out)
    nodes = []
    src = "input"
    if channels_last:
        nodes.append(helper.make_node("Transpose", ["input"], ["nchw"], perm=[0, 3, 1, 2]))
        src = "nchw"
    nodes += [
        helper.make_node("GlobalAveragePool", [src], ["pooled"]),
        helper.make_node("Flatten", ["pooled"], ["flat"], axis=1),
        helper.make_node("Gemm", ["flat", "W", "B"], ["output"], transB=1),
    ]
    graph = helper.make_graph(
        nodes, "fixture", [inp], [out],
        initializer=[numpy_helper.from_array(w, "W"), numpy_helper.from_array(b, "B")])
    model = helper.make_model(graph, opset_imports=[helper.make_opsetid("", 11)])
    model.ir_version = 6
    onnx.checker.check_model(model)
    onnx.save(model, path)


if __name__ == "__main__":
    build("mean_rgb_nhwc_1000.onnx", True, 1000)
    build("mean_rgb_nchw_1000.onnx", False, 1000)
    build("mean_rgb_nhwc_2048.onnx", True, 2048)
