import gradio as gr
from typing import List, Tuple

from elemdiff.config import config
from elemdiff.derivation import derive, derive_jacobian
from elemdiff.evaluator import verify
from elemdiff.exceptions import ElemDiffError
from elemdiff.syntax import format_deriv_spec, format_spec, parse
from elemdiff.utils import logger

EXAMPLE_SOURCE = """# shapes of the arguments and the result
a : 3 x 5
b : 4 x 5
c : 3 x 3
d : 8
f : 3 x 4
f[i; j] = exp (-sum{k}_0^4 ((a[i; k] + b[j; k]) ** 2 * c[i; i] + d[i + k] ** 3))
"""


def argument_names(source: str) -> List[str]:
    """Argument names of a source, empty if it does not parse."""
    try:
        return [a.name for a in parse(source).arguments]
    except ElemDiffError:
        return []


def derive_source(source: str) -> Tuple[str, str]:
    """Derive every adjoint of the function in source."""
    if not source.strip():
        return "❌ Error: Please enter a function definition.", ""
    try:
        spec = parse(source)
        text = format_deriv_spec(derive(spec))
        logger.info(f"Derived adjoints of {spec.name} from the web front end")
        return f"✅ Derived {len(spec.arguments)} adjoints of {spec.name}", text
    except ElemDiffError as e:
        error_msg = f"❌ Error: {e}"
        logger.error(error_msg)
        return error_msg, ""


def jacobian_source(source: str, arg: str) -> Tuple[str, str]:
    """Jacobian of the function in source wrt. arg, printed as a spec."""
    if not source.strip():
        return "❌ Error: Please enter a function definition.", ""
    if not arg:
        return "❌ Error: Please select an argument.", ""
    try:
        jacobian = derive_jacobian(parse(source), arg)
        return f"✅ Jacobian {jacobian.name} with shape {list(jacobian.output_shape)}", format_spec(jacobian)
    except ElemDiffError as e:
        error_msg = f"❌ Error: {e}"
        logger.error(error_msg)
        return error_msg, ""


def verify_source(source: str, trials: int, tol: float, seed: int) -> Tuple[str, str]:
    """Run the numeric check and return a status line and the JSON report."""
    if not source.strip():
        return "❌ Error: Please enter a function definition.", ""
    try:
        report = verify(parse(source), trials=int(trials), tol=float(tol), rng_seed=int(seed))
    except (ElemDiffError, ValueError) as e:
        error_msg = f"❌ Error: {e}"
        logger.error(error_msg)
        return error_msg, ""
    if report.passed:
        return f"✅ All adjoints of {report.spec} agree with both references", report.to_json()
    failed = sorted({r.arg for r in report.arguments if not r.passed})
    return f"❌ Verification failed for {', '.join(failed)}", report.to_json()


def create_gradio_interface():
    """Create the Gradio interface."""

    with gr.Blocks(title="elemdiff - Element-wise Tensor Derivatives", theme=gr.themes.Soft()) as demo:

        gr.Markdown("# 🧮 elemdiff - Element-wise Tensor Derivatives")
        gr.Markdown("Enter shape declarations and one element-wise definition. "
                    "Derive the adjoint of every argument, a Jacobian, or check the result numerically.")

        with gr.Row():
            with gr.Column(scale=2):
                source_input = gr.Textbox(label="Source (.tad)", value=EXAMPLE_SOURCE, lines=10)

                with gr.Accordion("⚙️ Verification Settings", open=False):
                    with gr.Row():
                        trials = gr.Slider(minimum=1, maximum=20, step=1,
                                           value=config.get("verify_trials", 5), label="Trials")
                        seed = gr.Number(value=config.get("verify_seed", 42), precision=0, label="Seed")
                    tolerance = gr.Number(value=config.get("verify_tolerance", 1e-5), label="Tolerance")

                arg_dropdown = gr.Dropdown(choices=argument_names(EXAMPLE_SOURCE), label="Jacobian argument")

                with gr.Row():
                    derive_btn = gr.Button("📐 Derive", variant="primary")
                    jacobian_btn = gr.Button("🧩 Jacobian")
                    verify_btn = gr.Button("✔️ Verify")

            with gr.Column(scale=3):
                status_output = gr.Textbox(label="Status", interactive=False)
                result_output = gr.Code(label="Result", interactive=False)

        source_input.change(
            fn=lambda src: gr.update(choices=argument_names(src)),
            inputs=[source_input],
            outputs=[arg_dropdown],
        )
        derive_btn.click(fn=derive_source, inputs=[source_input], outputs=[status_output, result_output])
        jacobian_btn.click(fn=jacobian_source, inputs=[source_input, arg_dropdown],
                           outputs=[status_output, result_output])
        verify_btn.click(fn=verify_source, inputs=[source_input, trials, tolerance, seed],
                         outputs=[status_output, result_output])

    return demo


if __name__ == "__main__":
    demo = create_gradio_interface()
    demo.launch(
        server_name=config.get("gradio_server_name", "0.0.0.0"),
        server_port=config.get("gradio_server_port", 7860),
        share=False,
        show_error=True
    )
