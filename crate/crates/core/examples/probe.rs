use padc_core::cpf::*;
use padc_core::feeder::*;

fn main() {
    let doc = std::fs::read_to_string("data/feeder13.json").unwrap();
    let f = parse_feeder(&doc).unwrap();
    let y = assemble_ybus(&f).unwrap();
    let u: Vec<f64> = f.input_marginals(None, None).unwrap().iter().map(|m| m.mean()).collect();
    let b = build_variation_vector(&f, &u).unwrap();
    let mw = b.mw_per_lambda(&f);
    println!("mw_per_lambda = {mw:.4}");
    let tr = trace_continuation(&f, &y, &b, &ContinuationOptions::default()).unwrap();
    println!("nose λ = {:.4} ({:.4} MW)", tr.nose_lambda, tr.nose_lambda * mw);
    let base = &tr.points[0].solution;
    let vmin_node = (0..f.node_count()).min_by(|&a, &c| base.v[a].partial_cmp(&base.v[c]).unwrap()).unwrap();
    println!("base min V = {:.4} at {}", base.v[vmin_node], f.node_label(vmin_node));
    // currents at base, at target TV lambda (1.112 MW), at VV crossing
    let targets = [0.0, 0.894 / mw, 1.112 / mw, 2.451 / mw];
    for &lt in &targets {
        let idx = tr.points.iter().position(|p| p.lambda >= lt).unwrap_or(tr.points.len() - 1);
        let p = &tr.points[idx];
        println!("--- λ = {:.3} ({:.3} MW), minV = {:.4}", p.lambda, p.lambda * mw,
                 p.solution.v.iter().cloned().fold(f64::INFINITY, f64::min));
        for (bi, br) in f.branches.iter().enumerate() {
            let amps = branch_current_amps(&f, &y, bi, &p.solution);
            let worst = amps.iter().cloned().fold(0.0f64, f64::max);
            println!("  {}-{}: max {:.1} A (rating {:.0})", f.buses[br.from].id, f.buses[br.to].id, worst, br.ampacity);
        }
    }
    let adc = extract_adc(&tr, &f, &b);
    println!("ADC: vv {:.4} tv {:.4} vc {:.4} MW", adc.lambda_vv, adc.lambda_tv, adc.lambda_vc);
    println!("bind: {:?} / {:?}", adc.binding_vv, adc.binding_tv);
}
